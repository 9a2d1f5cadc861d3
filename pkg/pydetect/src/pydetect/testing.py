"""In-process test doubles implementing the backend duck interface.

They keep protocol and plumbing tests runnable on machines that cannot
load pretrained weights. None of them approximate real model quality;
they are deterministic stand-ins with the same call contracts.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .backends import RawDetection

__all__ = ["StaticDetector", "FunctionDetector", "MeanAbsMetric"]


class StaticDetector:
    """Returns a canned detection list filtered by the request threshold."""

    kind = "detector"
    loaded = True
    load_error = None

    def __init__(self, name: str, detections: Sequence[RawDetection]) -> None:
        self.name = name
        self._detections = tuple(detections)

    def defaults(self) -> dict:
        return {"double": "static"}

    def infer(self, image: np.ndarray, conf_threshold: float) -> list[RawDetection]:
        del image
        return [d for d in self._detections if d.confidence >= conf_threshold]


class FunctionDetector:
    """Delegates inference to a plain function for scenario-driven tests."""

    kind = "detector"
    loaded = True
    load_error = None

    def __init__(
        self,
        name: str,
        fn: Callable[[np.ndarray, float], list[RawDetection]],
    ) -> None:
        self.name = name
        self._fn = fn

    def defaults(self) -> dict:
        return {"double": "function"}

    def infer(self, image: np.ndarray, conf_threshold: float) -> list[RawDetection]:
        return self._fn(image, conf_threshold)


class MeanAbsMetric:
    """Mean absolute pixel difference scaled to [0, 1]; zero iff inputs match."""

    kind = "metric"
    name = "lpips"
    loaded = True
    load_error = None

    def defaults(self) -> dict:
        return {"double": "mean-abs"}

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean() / 255.0)
