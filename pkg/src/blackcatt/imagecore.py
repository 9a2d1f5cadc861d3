"""Images, pixel masks, and bounding boxes: the substrate everything else manipulates.

Intensities live in [0, 1] as float64. Masks are boolean (H, W) arrays that
apply to every channel of a pixel. Bounding boxes are half-open integer
rectangles, so areas and rasterization are exact integer arithmetic. All
values are immutable after construction and safe to share across workers.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

__all__ = [
    "CodecError",
    "BoundingBox",
    "Image",
    "load_png",
    "png_bytes",
    "save_png",
    "quantize",
    "empty_mask",
    "full_mask",
    "mask_from_bbox",
    "mask_combine",
    "mask_area",
    "apply_masking_value",
]


class CodecError(ValueError):
    """Unreadable image file or unsupported PNG bit depth."""


@dataclass(frozen=True, slots=True, order=True)
class BoundingBox:
    """Half-open pixel rectangle: x1 <= x < x2 and y1 <= y < y2."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)):
                raise ValueError(f"bbox coordinate {name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.x1 < 0 or self.y1 < 0 or self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"invalid bbox ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    def fits(self, height: int, width: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    @classmethod
    def from_wire(cls, coords) -> "BoundingBox":
        """Build from wire-format [x1, y1, x2, y2], flooring mins and ceiling maxes.

        Remote detectors report float coordinates; the outward rounding keeps
        the integer box covering the reported one.
        """
        if len(coords) != 4:
            raise ValueError(f"bbox needs 4 coordinates, got {len(coords)}")
        x1, y1, x2, y2 = coords
        return cls(
            int(np.floor(x1)),
            int(np.floor(y1)),
            int(np.ceil(x2)),
            int(np.ceil(y2)),
        )


@dataclass(frozen=True, slots=True, eq=False)
class Image:
    """An (H, W, C) intensity raster with C in {1, 3} and values in [0, 1]."""

    data: np.ndarray
    image_id: str = ""

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (H, W, 1|3), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Image":
        return Image(data=data, image_id=self.image_id)

    def pixel_equal(self, other: "Image") -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))


def load_png(source: bytes | str | Path, image_id: str = "") -> Image:
    """Decode an 8-bit or 16-bit PNG (path or raw bytes) into an Image.

    Intensities are scaled by the maximum code value of the bit depth
    (255 or 65535). Palette and alpha variants are flattened to RGB/L.
    """
    try:
        if isinstance(source, bytes):
            pil = _PILImage.open(io.BytesIO(source))
        else:
            pil = _PILImage.open(source)
            if not image_id:
                image_id = Path(source).stem
        pil.load()
    except Exception as exc:  # noqa: BLE001 - PIL raises a zoo of types
        raise CodecError(f"cannot decode image: {exc}") from exc

    mode = pil.mode
    if mode == "P":
        pil = pil.convert("RGB")
        mode = "RGB"
    elif mode == "RGBA":
        pil = pil.convert("RGB")
        mode = "RGB"
    elif mode == "LA":
        pil = pil.convert("L")
        mode = "L"

    if mode in ("L", "RGB"):
        data = np.asarray(pil, dtype=np.float64) / 255.0
    elif mode in ("I;16", "I;16B", "I;16L", "I"):
        raw = np.asarray(pil, dtype=np.float64)
        if raw.size and raw.max() > 65535:
            raise CodecError(f"unsupported bit depth for mode {mode}")
        data = raw / 65535.0
    else:
        raise CodecError(f"unsupported image mode {mode!r}")
    return Image(data=data, image_id=image_id)


def png_bytes(image: Image) -> bytes:
    """Encode to 8-bit PNG bytes: value -> round(value * 255)."""
    quantized = np.rint(image.data * 255.0).astype(np.uint8)
    if image.channels == 1:
        pil = _PILImage.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(quantized, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: Image, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(png_bytes(image))
    return path


def quantize(image: Image) -> Image:
    """Snap intensities to the 8-bit grid (round half to even), k/255 values.

    Images decoded from 8-bit PNG are already on the grid, so quantize is
    the identity for them; use it on synthesized candidates before sending
    them to a detector so that PNG persistence round-trips bit-exactly.
    """
    return image.with_data(np.rint(image.data * 255.0) / 255.0)


def empty_mask(height: int, width: int) -> np.ndarray:
    return np.zeros((height, width), dtype=bool)


def full_mask(height: int, width: int) -> np.ndarray:
    return np.ones((height, width), dtype=bool)


def mask_from_bbox(bbox: BoundingBox, height: int, width: int) -> np.ndarray:
    if not bbox.fits(height, width):
        raise ValueError(f"bbox {bbox} exceeds {height}x{width} image")
    mask = np.zeros((height, width), dtype=bool)
    mask[bbox.y1 : bbox.y2, bbox.x1 : bbox.x2] = True
    return mask


def mask_combine(kind: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask algebra: kind in {and, or, minus, not}."""
    a = np.asarray(a, dtype=bool)
    if kind == "not":
        if b is not None:
            raise ValueError("'not' takes a single mask")
        return ~a
    if b is None:
        raise ValueError(f"'{kind}' needs two masks")
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if kind == "and":
        return a & b
    if kind == "or":
        return a | b
    if kind == "minus":
        return a & ~b
    raise ValueError(f"unknown mask op {kind!r}")


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def apply_masking_value(image: Image, keep: np.ndarray, masking_value) -> Image:
    """Keep pixels where `keep` is true; set every other pixel to masking_value.

    masking_value is a scalar intensity or a per-channel sequence; it applies
    to all channels of the replaced pixels.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (image.height, image.width):
        raise ValueError(f"mask shape {keep.shape} does not match image {image.shape[:2]}")
    fill = np.asarray(masking_value, dtype=np.float64)
    if fill.ndim == 0:
        fill = np.full((image.channels,), float(fill))
    if fill.shape != (image.channels,):
        raise ValueError(f"masking value must be scalar or {image.channels}-channel")
    out = np.where(keep[:, :, np.newaxis], image.data, fill[np.newaxis, np.newaxis, :])
    return image.with_data(out)
