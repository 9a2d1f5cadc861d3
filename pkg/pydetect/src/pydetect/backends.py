"""Inference backends: pretrained detectors and a perceptual metric.

Heavy dependencies (torch, torchvision, ultralytics, lpips) import lazily
on first use, so the server starts and answers /health on machines that
cannot load every model. A backend that cannot come up raises
ModelUnavailable with the reason; the server maps that to HTTP 503 and
/health keeps reporting the stored reason.

Backend duck interface (the test doubles in pydetect.testing implement it
too): attributes `name`, `kind`, `loaded`, `load_error`, a `defaults()`
dict of the framework settings in force, and either
`infer(image, conf_threshold) -> list[RawDetection]` for detectors or
`distance(a, b) -> float` for metrics. Images arrive as (H, W, 3) uint8
RGB arrays at original resolution, and detectors must return boxes in
those same pixel coordinates.

Determinism: weights are pinned, models run in eval mode under
torch.inference_mode with a fixed torch seed and deterministic cuDNN
flags when CUDA is present. Inference per backend is serialized by a
lock, so no mutable state is shared across concurrent requests.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .labels import SPARSE_TO_CONTIGUOUS

__all__ = [
    "RawDetection",
    "ModelUnavailable",
    "UltralyticsDetector",
    "TorchvisionFasterRcnn",
    "LpipsMetric",
]


@dataclass(frozen=True)
class RawDetection:
    """One backend output in original-image pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float
    label_id: int  # contiguous 0-based COCO id
    confidence: float


class ModelUnavailable(RuntimeError):
    """The backend's dependencies or weights cannot be loaded here."""


def _seed_torch() -> None:
    import torch

    torch.manual_seed(0)
    if torch.cuda.is_available():
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False


class _LazyModel:
    """Load-once holder; a failed load is cached so requests fail fast."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._model = None
        self._error: str | None = None

    @property
    def loaded(self) -> bool:
        return self._model is not None

    @property
    def load_error(self) -> str | None:
        return self._error

    def _build(self):
        raise NotImplementedError

    def _ensure(self):
        with self._lock:
            if self._model is None:
                if self._error is not None:
                    raise ModelUnavailable(self._error)
                try:
                    self._model = self._build()
                except ModelUnavailable as exc:
                    self._error = str(exc)
                    raise
                except Exception as exc:  # noqa: BLE001 - import/IO failures vary
                    self._error = f"{type(exc).__name__}: {exc}"
                    raise ModelUnavailable(self._error) from exc
            return self._model


class UltralyticsDetector(_LazyModel):
    """COCO-pretrained detector served from an ultralytics checkpoint.

    The toolkit letterboxes internally and reports xyxy boxes already
    mapped back to the input resolution, so no coordinate fixup is needed.
    Class ids are contiguous 0-based COCO.
    """

    kind = "detector"

    def __init__(self, name: str, weight: str, family: str = "yolo", device: str = "cpu") -> None:
        super().__init__()
        self.name = name
        self.weight = weight
        self.family = family
        self.device = device

    def defaults(self) -> dict:
        base = {"imgsz": 640, "max_det": 300, "conf_default": 0.25}
        if self.family == "rtdetr":
            base["nms"] = "none (end-to-end decoder)"
        else:
            base["nms"] = {"iou": 0.7, "agnostic": False}
        return base

    def _build(self):
        try:
            import ultralytics
        except ImportError as exc:
            raise ModelUnavailable(f"ultralytics is not installed: {exc}") from exc
        _seed_torch()
        loader = ultralytics.RTDETR if self.family == "rtdetr" else ultralytics.YOLO
        return loader(self.weight)

    def infer(self, image: np.ndarray, conf_threshold: float) -> list[RawDetection]:
        with self._lock:
            model = self._ensure()
            # raw ndarray input is interpreted as BGR (the OpenCV convention)
            bgr = np.ascontiguousarray(image[:, :, ::-1])
            results = model.predict(
                bgr, conf=conf_threshold, device=self.device, verbose=False
            )
        boxes = results[0].boxes
        coords = boxes.xyxy.cpu().numpy()
        classes = boxes.cls.cpu().numpy()
        scores = boxes.conf.cpu().numpy()
        out = []
        for (x1, y1, x2, y2), label, score in zip(coords, classes, scores):
            if score < conf_threshold:
                continue
            out.append(
                RawDetection(float(x1), float(y1), float(x2), float(y2), int(label), float(score))
            )
        return out


class TorchvisionFasterRcnn(_LazyModel):
    """Two-stage detector with torchvision's published COCO weights.

    The model's transform resizes internally and maps boxes back to input
    pixels. Labels arrive in the sparse 1-90 id space and are translated
    to contiguous ids; ids outside the 80-class table are dropped.
    """

    kind = "detector"
    name = "fasterrcnn_resnet50_fpn_v2"

    def __init__(self, device: str = "cpu") -> None:
        super().__init__()
        self.device = device

    def defaults(self) -> dict:
        return {
            "box_score_thresh": 0.05,
            "box_nms_thresh": 0.5,
            "detections_per_img": 100,
            "min_size": 800,
            "max_size": 1333,
        }

    def _build(self):
        try:
            import torch  # noqa: F401 - presence check
            from torchvision.models import detection as tv_detection
        except ImportError as exc:
            raise ModelUnavailable(f"torchvision is not installed: {exc}") from exc
        _seed_torch()
        weights = tv_detection.FasterRCNN_ResNet50_FPN_V2_Weights.DEFAULT
        model = tv_detection.fasterrcnn_resnet50_fpn_v2(weights=weights)
        model.eval()
        model.to(self.device)
        return model

    def infer(self, image: np.ndarray, conf_threshold: float) -> list[RawDetection]:
        import torch

        with self._lock:
            model = self._ensure()
            tensor = (
                torch.from_numpy(np.ascontiguousarray(image))
                .permute(2, 0, 1)
                .to(torch.float32)
                .div(255.0)
                .to(self.device)
            )
            with torch.inference_mode():
                result = model([tensor])[0]
        coords = result["boxes"].cpu().numpy()
        labels = result["labels"].cpu().numpy()
        scores = result["scores"].cpu().numpy()
        out = []
        for (x1, y1, x2, y2), sparse, score in zip(coords, labels, scores):
            if score < conf_threshold:
                continue
            contiguous = SPARSE_TO_CONTIGUOUS.get(int(sparse))
            if contiguous is None:
                continue
            out.append(
                RawDetection(float(x1), float(y1), float(x2), float(y2), contiguous, float(score))
            )
        return out


class LpipsMetric(_LazyModel):
    """Perceptual distance over pretrained AlexNet features.

    Inputs are mapped from uint8 RGB to the [-1, 1] range the network
    expects. Identical inputs give exactly zero.
    """

    kind = "metric"
    name = "lpips"

    def __init__(self, device: str = "cpu") -> None:
        super().__init__()
        self.device = device

    def defaults(self) -> dict:
        return {"net": "alex"}

    def _build(self):
        try:
            import lpips as lpips_pkg
            import torch  # noqa: F401 - presence check
        except ImportError as exc:
            raise ModelUnavailable(f"lpips is not installed: {exc}") from exc
        _seed_torch()
        net = lpips_pkg.LPIPS(net="alex", verbose=False)
        net.eval()
        net.to(self.device)
        return net

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        import torch

        def to_tensor(array: np.ndarray):
            return (
                torch.from_numpy(np.ascontiguousarray(array))
                .permute(2, 0, 1)
                .to(torch.float32)
                .div(127.5)
                .sub(1.0)
                .unsqueeze(0)
                .to(self.device)
            )

        with self._lock:
            net = self._ensure()
            with torch.inference_mode():
                value = net(to_tensor(a), to_tensor(b))
        return float(value.item())
