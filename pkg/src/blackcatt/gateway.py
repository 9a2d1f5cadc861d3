"""Uniform black-box access to object detectors.

Provides the deterministic synthetic detector used throughout the test
suite, the HTTP wire-protocol client for real detector servers, an
in-process response cache, atomic query counting, IoU matching, and the
classification of post-attack outcomes.

Wire protocol (shared with detector servers):
  POST {endpoint}/detect  {"image_png": "<base64 PNG>", "conf_threshold": 0.25}
  response                {"model": "<tag>", "detections": [{"bbox": [x1,y1,x2,y2],
                           "label": "<name>", "label_id": <int>, "confidence": <float>}]}
  Errors are HTTP 4xx/5xx with a JSON body {"error": "<message>"}.
"""
from __future__ import annotations

import hashlib
import json
import threading
from base64 import b64encode
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .imagecore import BoundingBox, Image, png_bytes

__all__ = [
    "GatewayError",
    "Outcome",
    "ATTACK_GOALS",
    "Detection",
    "DetectionSet",
    "QueryCounter",
    "Detector",
    "SyntheticScenario",
    "synthetic_detect",
    "SyntheticDetector",
    "HttpDetector",
    "CachingDetector",
    "iou",
    "classify_outcome",
]


class GatewayError(RuntimeError):
    """Transport or protocol failure while talking to a detector."""


class Outcome(str, Enum):
    UNCHANGED = "unchanged"
    NO_PREDICTION = "no_prediction"
    PREDICTION_CHANGED = "prediction_changed"
    ADDED_NEW_PREDICTION = "added_new_prediction"


#: The three attack goals, in canonical order. "unchanged" is never a goal.
ATTACK_GOALS: tuple[Outcome, ...] = (
    Outcome.NO_PREDICTION,
    Outcome.PREDICTION_CHANGED,
    Outcome.ADDED_NEW_PREDICTION,
)


@dataclass(frozen=True, slots=True)
class Detection:
    """One detector output: class label, confidence, box."""

    label: str
    label_id: int
    confidence: float
    bbox: BoundingBox

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_wire(self) -> dict:
        return {
            "bbox": self.bbox.as_list(),
            "label": self.label,
            "label_id": int(self.label_id),
            "confidence": float(self.confidence),
        }

    @classmethod
    def from_wire(cls, payload: dict) -> "Detection":
        return cls(
            label=str(payload["label"]),
            label_id=int(payload["label_id"]),
            confidence=float(payload["confidence"]),
            bbox=BoundingBox.from_wire(payload["bbox"]),
        )


def _canonical_order(detections: Iterable[Detection]) -> tuple[Detection, ...]:
    # descending confidence; ties by (label id, x1, y1)
    return tuple(
        sorted(
            detections,
            key=lambda d: (-d.confidence, d.label_id, d.bbox.x1, d.bbox.y1),
        )
    )


@dataclass(frozen=True, slots=True)
class DetectionSet:
    """Canonically ordered, immutable collection of detections."""

    detections: tuple[Detection, ...] = ()
    model_tag: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", _canonical_order(self.detections))

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def __getitem__(self, index: int) -> Detection:
        return self.detections[index]

    @property
    def empty(self) -> bool:
        return not self.detections

    def to_wire(self) -> dict:
        return {
            "model": self.model_tag,
            "detections": [d.to_wire() for d in self.detections],
        }

    @classmethod
    def from_wire(cls, payload: dict) -> "DetectionSet":
        try:
            detections = tuple(Detection.from_wire(d) for d in payload["detections"])
            return cls(detections=detections, model_tag=str(payload.get("model", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed detector response: {exc}") from exc


class QueryCounter:
    """Thread-safe count of detector invocations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._calls = 0

    def bump(self) -> int:
        with self._lock:
            self._calls += 1
            return self._calls

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def reset(self) -> None:
        with self._lock:
            self._calls = 0


class Detector(Protocol):
    """Anything that maps an image to a DetectionSet, counting queries."""

    counter: QueryCounter

    def detect(self, image: Image) -> DetectionSet:  # pragma: no cover - protocol
        ...


@dataclass(frozen=True, slots=True)
class SyntheticScenario:
    """Parameters of the deterministic region-mean detector.

    A detection is emitted iff the object region is bright enough
    (mean >= object_floor) and the context region sits close enough to its
    calibration point (|mean - c_star| <= tau). The two regions are disjoint,
    which is what makes pixels outside the reported box causally necessary
    whenever tau is tight.
    """

    object_region: BoundingBox
    context_region: BoundingBox
    label: str
    label_id: int
    c_star: float
    tau: float
    object_floor: float
    model_tag: str = "synthetic"

    def __post_init__(self) -> None:
        for name in ("c_star", "tau", "object_floor"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        a, b = self.object_region, self.context_region
        overlap_w = min(a.x2, b.x2) - max(a.x1, b.x1)
        overlap_h = min(a.y2, b.y2) - max(a.y1, b.y1)
        if overlap_w > 0 and overlap_h > 0:
            raise ValueError("object_region and context_region must be disjoint")

    def to_dict(self) -> dict:
        return {
            "object_region": self.object_region.as_list(),
            "context_region": self.context_region.as_list(),
            "label": self.label,
            "label_id": int(self.label_id),
            "c_star": float(self.c_star),
            "tau": float(self.tau),
            "object_floor": float(self.object_floor),
            "model_tag": self.model_tag,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticScenario":
        return cls(
            object_region=BoundingBox(*payload["object_region"]),
            context_region=BoundingBox(*payload["context_region"]),
            label=str(payload["label"]),
            label_id=int(payload["label_id"]),
            c_star=float(payload["c_star"]),
            tau=float(payload["tau"]),
            object_floor=float(payload["object_floor"]),
            model_tag=str(payload.get("model_tag", "synthetic")),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _region_mean(image: Image, region: BoundingBox) -> float:
    patch = image.data[region.y1 : region.y2, region.x1 : region.x2, :]
    return float(patch.mean())


def synthetic_detect(image: Image, scenario: SyntheticScenario) -> DetectionSet:
    """Pure region-mean detection rule; exhaustively verifiable on tiny images."""
    if not scenario.object_region.fits(image.height, image.width):
        raise ValueError("object_region exceeds image")
    if not scenario.context_region.fits(image.height, image.width):
        raise ValueError("context_region exceeds image")
    m_obj = _region_mean(image, scenario.object_region)
    m_ctx = _region_mean(image, scenario.context_region)
    if m_obj >= scenario.object_floor and abs(m_ctx - scenario.c_star) <= scenario.tau:
        det = Detection(
            label=scenario.label,
            label_id=scenario.label_id,
            confidence=m_obj,
            bbox=scenario.object_region,
        )
        return DetectionSet(detections=(det,), model_tag=scenario.model_tag)
    return DetectionSet(model_tag=scenario.model_tag)


class SyntheticDetector:
    """Detector interface over a SyntheticScenario. Pure and shareable."""

    def __init__(
        self,
        scenario: SyntheticScenario,
        conf_threshold: float = 0.25,
        counter: QueryCounter | None = None,
    ) -> None:
        if not 0.0 <= conf_threshold <= 1.0:
            raise ValueError("conf_threshold outside [0, 1]")
        self.scenario = scenario
        self.conf_threshold = conf_threshold
        self.counter = counter if counter is not None else QueryCounter()

    def detect(self, image: Image) -> DetectionSet:
        self.counter.bump()
        raw = synthetic_detect(image, self.scenario)
        kept = tuple(d for d in raw if d.confidence >= self.conf_threshold)
        return DetectionSet(detections=kept, model_tag=raw.model_tag)


class HttpDetector:
    """Wire-protocol client. Instances are safe to share across threads."""

    def __init__(
        self,
        endpoint: str,
        conf_threshold: float = 0.25,
        model: str | None = None,
        counter: QueryCounter | None = None,
        timeout: float = 30.0,
    ) -> None:
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.conf_threshold = conf_threshold
        self.model = model
        self.counter = counter if counter is not None else QueryCounter()
        self._client = httpx.Client(timeout=timeout)

    def detect(self, image: Image) -> DetectionSet:
        import httpx

        self.counter.bump()
        payload = {
            "image_png": b64encode(png_bytes(image)).decode("ascii"),
            "conf_threshold": self.conf_threshold,
        }
        url = f"{self.endpoint}/detect"
        params = {"model": self.model} if self.model else None
        try:
            response = self._client.post(url, json=payload, params=params)
        except httpx.HTTPError as exc:
            raise GatewayError(f"detector unreachable at {url}: {exc}") from exc
        if response.status_code != 200:
            message = ""
            try:
                message = response.json().get("error", "")
            except Exception:  # noqa: BLE001 - body may not be JSON
                message = response.text[:200]
            raise GatewayError(f"detector error {response.status_code}: {message}")
        try:
            body = response.json()
        except ValueError as exc:
            raise GatewayError(f"non-JSON detector response: {exc}") from exc
        return DetectionSet.from_wire(body)

    def close(self) -> None:
        self._client.close()


class CachingDetector:
    """Memoizes an inner detector on pixel content.

    Keys are SHA-256 of the raw pixel buffer plus the configured threshold,
    which is equivalent for caching purposes to hashing the canonical PNG
    encoding but avoids an encode per query. The inner counter moves only on
    misses, so cached replays are free.
    """

    def __init__(self, inner) -> None:
        self.inner = inner
        self.counter = inner.counter
        self._lock = threading.Lock()
        self._memo: dict[str, DetectionSet] = {}

    def _key(self, image: Image) -> str:
        digest = hashlib.sha256(np.ascontiguousarray(image.data).tobytes())
        digest.update(repr(getattr(self.inner, "conf_threshold", None)).encode())
        return digest.hexdigest()

    def detect(self, image: Image) -> DetectionSet:
        key = self._key(image)
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        result = self.inner.detect(image)
        with self._lock:
            self._memo[key] = result
        return result


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter_w = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter_h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    return inter / union


def classify_outcome(
    original: Detection,
    after: DetectionSet,
    iou_match: float = 0.5,
) -> Outcome:
    """Classify a post-attack DetectionSet relative to the single original detection.

    A "match" is a detection with the original's label at IoU >= iou_match.
    Rules, in order: empty output is a removed detection; a qualifying
    overlap under a different label (with no match) is a changed prediction;
    a match accompanied by anything else means something new appeared; a lone
    match is unchanged; and any remaining nonempty output has no qualifying
    overlap with the original, so it counts as a new prediction.
    """
    if after.empty:
        return Outcome.NO_PREDICTION
    match_exists = any(
        d.label_id == original.label_id and iou(d.bbox, original.bbox) >= iou_match
        for d in after
    )
    if not match_exists:
        changed = any(
            d.label_id != original.label_id and iou(d.bbox, original.bbox) >= iou_match
            for d in after
        )
        return Outcome.PREDICTION_CHANGED if changed else Outcome.ADDED_NEW_PREDICTION
    if len(after) > 1:
        return Outcome.ADDED_NEW_PREDICTION
    return Outcome.UNCHANGED
