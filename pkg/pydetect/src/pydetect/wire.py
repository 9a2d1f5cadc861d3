"""Request decoding and response shaping for the HTTP protocol.

The protocol is JSON over HTTP:
  POST /detect  {"image_png": "<base64 PNG>", "conf_threshold": 0.25}
  response      {"model": "<tag>", "detections": [{"bbox": [x1, y1, x2, y2],
                 "label": "<name>", "label_id": <int>, "confidence": <float>}]}
  POST /lpips   {"image_a_png": "...", "image_b_png": "..."} -> {"lpips": <float>}
Errors carry {"error": "<message>"} with a 4xx/5xx status.
"""
from __future__ import annotations

import base64
import binascii
import io
from collections.abc import Iterable

import numpy as np
from PIL import Image as PILImage

from .labels import class_name

__all__ = ["ProtocolError", "decode_image", "read_confidence", "detections_payload"]


class ProtocolError(Exception):
    """Client-visible failure; status and message go straight to the wire."""

    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status
        self.message = message


def decode_image(payload: dict, field: str) -> np.ndarray:
    """Base64 PNG field -> (H, W, 3) uint8 RGB array, or ProtocolError(400)."""
    value = payload.get(field)
    if not isinstance(value, str):
        raise ProtocolError(400, f"missing or non-string field {field!r}")
    try:
        raw = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(400, f"{field}: invalid base64: {exc}") from exc
    try:
        with PILImage.open(io.BytesIO(raw)) as pil:
            pil.load()
            rgb = pil.convert("RGB")
    except Exception as exc:  # noqa: BLE001 - PIL raises a zoo of types
        raise ProtocolError(400, f"{field}: cannot decode image: {exc}") from exc
    return np.asarray(rgb, dtype=np.uint8)


def read_confidence(payload: dict, default: float = 0.25) -> float:
    value = payload.get("conf_threshold", default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(400, "conf_threshold must be a number")
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ProtocolError(400, f"conf_threshold {value} outside [0, 1]")
    return value


def detections_payload(model_tag: str, detections: Iterable) -> dict:
    """Wire payload in canonical order; ordering is part of determinism.

    Detections sort by descending confidence with (label id, x1, y1) as the
    tie break, matching the order the harness normalizes to on its side.
    """
    ordered = sorted(
        detections, key=lambda d: (-d.confidence, d.label_id, d.x1, d.y1)
    )
    return {
        "model": model_tag,
        "detections": [
            {
                "bbox": [float(d.x1), float(d.y1), float(d.x2), float(d.y2)],
                "label": class_name(d.label_id),
                "label_id": int(d.label_id),
                "confidence": float(d.confidence),
            }
            for d in ordered
        ],
    }
