"""Model registry: canonical names, aliases, and health reporting.

One registry instance backs one server process. Detectors register under
a canonical name plus aliases (checkpoint file names, weight-enum
spellings); lookup is case-insensitive. The first registered detector is
the default for requests without ?model=.
"""
from __future__ import annotations

from .backends import (
    LpipsMetric,
    ModelUnavailable,
    TorchvisionFasterRcnn,
    UltralyticsDetector,
)

__all__ = ["UnknownModel", "ModelRegistry", "default_registry"]


class UnknownModel(Exception):
    """No registered detector answers to the requested name."""


class ModelRegistry:
    def __init__(self) -> None:
        self._detectors: dict[str, object] = {}
        self._aliases: dict[str, str] = {}
        self._metric = None
        self.default_name: str | None = None

    def register(self, backend, aliases: tuple[str, ...] = ()) -> None:
        name = backend.name
        self._detectors[name] = backend
        if self.default_name is None:
            self.default_name = name
        for alias in (name, *aliases):
            self._aliases[alias.lower()] = name

    def register_metric(self, backend) -> None:
        self._metric = backend

    @property
    def names(self) -> list[str]:
        return list(self._detectors)

    def resolve(self, requested: str | None):
        """Detector for the requested name/alias; None selects the default."""
        if not requested:
            if self.default_name is None:
                raise UnknownModel("no detectors registered")
            return self._detectors[self.default_name]
        canonical = self._aliases.get(requested.lower())
        if canonical is None:
            raise UnknownModel(f"unknown model {requested!r}")
        return self._detectors[canonical]

    def metric(self):
        if self._metric is None:
            raise ModelUnavailable("no perceptual metric registered")
        return self._metric

    def health(self) -> dict:
        models = []
        for name, backend in self._detectors.items():
            models.append(self._entry(backend, default=name == self.default_name))
        if self._metric is not None:
            models.append(self._entry(self._metric, default=False))
        return {"models": models}

    @staticmethod
    def _entry(backend, default: bool) -> dict:
        return {
            "name": backend.name,
            "kind": backend.kind,
            "default": default,
            "loaded": backend.loaded,
            "load_error": backend.load_error,
            "defaults": backend.defaults(),
        }


def default_registry(device: str = "cpu") -> ModelRegistry:
    """The stock lineup: two ultralytics checkpoints, one torchvision model, LPIPS."""
    registry = ModelRegistry()
    registry.register(
        UltralyticsDetector("yolo11n", "yolo11n.pt", family="yolo", device=device),
        aliases=("yolo11n.pt",),
    )
    registry.register(
        UltralyticsDetector("rtdetr-l", "rtdetr-l.pt", family="rtdetr", device=device),
        aliases=("rtdetr-l.pt", "rtdetr_l"),
    )
    registry.register(
        TorchvisionFasterRcnn(device=device),
        aliases=(
            "FasterRCNN_ResNet50_FPN_V2",
            "FasterRCNN_ResNet50_FPN_V2_Weight",
            "FasterRCNN_ResNet50_FPN_V2_Weights",
            "fasterrcnn",
        ),
    )
    registry.register_metric(LpipsMetric(device=device))
    return registry
