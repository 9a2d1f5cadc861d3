"""HTTP sidecar serving pretrained object detectors and a perceptual metric.

Speaks the JSON wire protocol of the blackcatt attack harness: POST
/detect and POST /lpips, plus GET /health listing every model with the
framework defaults in force. Model weights load lazily on first request,
so the process starts (and reports health) even where the optional
inference dependencies are absent.
"""
from .backends import (
    LpipsMetric,
    ModelUnavailable,
    RawDetection,
    TorchvisionFasterRcnn,
    UltralyticsDetector,
)
from .registry import ModelRegistry, UnknownModel, default_registry
from .server import create_app

__version__ = "0.1.0"

__all__ = [
    "LpipsMetric",
    "ModelRegistry",
    "ModelUnavailable",
    "RawDetection",
    "TorchvisionFasterRcnn",
    "UltralyticsDetector",
    "UnknownModel",
    "create_app",
    "default_registry",
    "__version__",
]
