"""Occlusion-based responsibility maps for a target detection or its absence.

Two estimators share the ResponsibilityMap interface: a random-grid
occlusion method (coarse Bernoulli grids, bilinearly upsampled with a random
sub-cell shift, scores accumulated per mask) and a recursive-partition
method that credits image parts appearing in minimal passing occlusion
subsets with responsibility 1/k. The recursive method also supports the
"absence" target used to build the negated map.

Both estimators are bit-reproducible given (inputs, parameters, seed)
regardless of worker count: every candidate evaluation draws from its own
counter-based stream keyed by seed + candidate index (see rng module).
"""
from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gateway import Detection, DetectionSet, iou
from .imagecore import BoundingBox, Image, apply_masking_value
from .rng import uniforms

__all__ = [
    "TargetSpec",
    "ResponsibilityMap",
    "target_score",
    "target_satisfied",
    "match_confidence",
    "drise_map",
    "rex_map",
    "combine_maps",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class TargetSpec:
    """What a map is computed against: a concrete detection, or none at all."""

    kind: str  # "detection" | "none"
    label: str | None = None
    label_id: int | None = None
    bbox: BoundingBox | None = None
    iou_match: float = 0.5

    def __post_init__(self) -> None:
        if self.kind == "detection":
            if self.label_id is None or self.bbox is None:
                raise ValueError("detection target needs label and bbox")
        elif self.kind == "none":
            if self.label is not None or self.label_id is not None or self.bbox is not None:
                raise ValueError("absence target carries no label or bbox")
        else:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if not 0.0 <= self.iou_match <= 1.0:
            raise ValueError("iou_match outside [0, 1]")

    @classmethod
    def for_detection(cls, detection: Detection, iou_match: float = 0.5) -> "TargetSpec":
        return cls(
            kind="detection",
            label=detection.label,
            label_id=detection.label_id,
            bbox=detection.bbox,
            iou_match=iou_match,
        )

    @classmethod
    def absence(cls) -> "TargetSpec":
        return cls(kind="none")


def match_confidence(detections: DetectionSet, target: TargetSpec) -> float | None:
    """Highest confidence among detections matching a detection target, else None."""
    if target.kind != "detection":
        raise ValueError("match_confidence needs a detection target")
    best: float | None = None
    for det in detections:
        if det.label_id == target.label_id and iou(det.bbox, target.bbox) >= target.iou_match:
            best = det.confidence if best is None else max(best, det.confidence)
    return best


def target_satisfied(detections: DetectionSet, target: TargetSpec) -> bool:
    """Detection targets need a label match at sufficient IoU; absence needs emptiness."""
    if target.kind == "none":
        return detections.empty
    return match_confidence(detections, target) is not None


def target_score(detections: DetectionSet, target: TargetSpec) -> float:
    """Soft score for grid occlusion: max of label-match * IoU * confidence."""
    if target.kind != "detection":
        raise ValueError("target_score needs a detection target")
    best = 0.0
    for det in detections:
        if det.label_id != target.label_id:
            continue
        best = max(best, iou(det.bbox, target.bbox) * det.confidence)
    return best


@dataclass(frozen=True, slots=True, eq=False)
class ResponsibilityMap:
    """Per-pixel nonnegative scores, normalized so the max is 1 unless all-zero."""

    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValueError(f"map must be 2-D, got shape {values.shape}")
        if values.size and values.min() < 0:
            raise ValueError("map values must be nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "ResponsibilityMap":
        raw = np.asarray(raw, dtype=np.float64)
        peak = float(raw.max()) if raw.size else 0.0
        if peak <= 0.0:
            return cls(values=np.zeros_like(raw), degenerate=True)
        return cls(values=raw / peak, degenerate=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def support(self) -> np.ndarray:
        return self.values > 0.0

    def to_payload(self) -> dict:
        flat = np.ascontiguousarray(self.values, dtype=np.float32)
        return {
            "height": int(self.height),
            "width": int(self.width),
            "data": base64.b64encode(flat.tobytes()).decode("ascii"),
        }

    def payload_bytes(self) -> bytes:
        return json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_payload(cls, payload: dict) -> "ResponsibilityMap":
        height, width = int(payload["height"]), int(payload["width"])
        raw = np.frombuffer(base64.b64decode(payload["data"]), dtype=np.float32)
        if raw.size != height * width:
            raise ValueError("map payload size mismatch")
        values = raw.reshape(height, width).astype(np.float64)
        return cls(values=values, degenerate=bool(not values.any()))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.payload_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ResponsibilityMap":
        return cls.from_payload(json.loads(Path(path).read_bytes()))


def combine_maps(r: ResponsibilityMap, rbar: ResponsibilityMap) -> ResponsibilityMap:
    if r.values.shape != rbar.values.shape:
        raise ValueError("map dimensions differ")
    return ResponsibilityMap.from_raw(r.values + rbar.values)


def _bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize by bilinear interpolation, half-pixel centers, edges clamped."""
    gh, gw = grid.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (gh / out_h) - 0.5, 0.0, gh - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (gw / out_w) - 0.5, 0.0, gw - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (ys - y0)[:, np.newaxis]
    wx = (xs - x0)[np.newaxis, :]
    top = grid[np.ix_(y0, x0)] * (1.0 - wx) + grid[np.ix_(y0, x1)] * wx
    bottom = grid[np.ix_(y1, x0)] * (1.0 - wx) + grid[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bottom * wy


def occlusion_grid_mask(
    height: int,
    width: int,
    cells: int,
    p_keep: float,
    seed: int,
) -> np.ndarray:
    """One soft occlusion mask in [0, 1].

    Stream keyed by `seed`: cells*cells uniforms row-major form the Bernoulli
    grid (kept iff u < p_keep), then one uniform each for the vertical and
    horizontal sub-cell shifts (floor(u * cell)). The grid is bilinearly
    upsampled to (cells+1) cells and cropped at the shift, so every pixel's
    expected value is exactly p_keep.
    """
    cell_h = -(-height // cells)
    cell_w = -(-width // cells)
    draws = uniforms(seed, cells * cells + 2)
    grid = (draws[: cells * cells].reshape(cells, cells) < p_keep).astype(np.float64)
    shift_y = min(int(draws[-2] * cell_h), cell_h - 1)
    shift_x = min(int(draws[-1] * cell_w), cell_w - 1)
    up = _bilinear_upsample(grid, (cells + 1) * cell_h, (cells + 1) * cell_w)
    return up[shift_y : shift_y + height, shift_x : shift_x + width]


def drise_map(
    image: Image,
    detector,
    target: TargetSpec,
    n_masks: int = 1000,
    cells: int = 8,
    p_keep: float = 0.5,
    seed: int = 0,
) -> ResponsibilityMap:
    """Random-grid occlusion map: accumulate score_i * mask_i over n_masks.

    score_i is the soft target score of detecting on image * mask_i
    (elementwise, all channels). Issues exactly n_masks detector calls.
    Candidate i draws from the stream keyed by seed + i.
    """
    if target.kind != "detection":
        raise ValueError("grid occlusion needs a detection target")
    if n_masks < 1:
        raise ValueError("n_masks must be >= 1")
    if not 0.0 < p_keep < 1.0:
        raise ValueError("p_keep must lie strictly inside (0, 1)")
    if cells < 1 or cells > min(image.height, image.width):
        raise ValueError("cells must be >= 1 and at most min(H, W)")

    accum = np.zeros((image.height, image.width), dtype=np.float64)
    for index in range(n_masks):
        mask = occlusion_grid_mask(image.height, image.width, cells, p_keep, seed + index)
        occluded = image.with_data(image.data * mask[:, :, np.newaxis])
        score = target_score(detector.detect(occluded), target)
        if score > 0.0:
            accum += score * mask
    return ResponsibilityMap.from_raw(accum)


def _split_rect(rect: tuple[int, int, int, int], splits: int) -> list[tuple[int, int, int, int]]:
    """Partition (y1, x1, y2, x2) into about `splits` sub-rectangles.

    A perfect square gives a g x g grid; otherwise the grid is g1 x g2 with
    the extra cuts along the longer side. Zero-size cells are dropped; a
    1x1 rect yields nothing, which is what stops recursion there.
    """
    y1, x1, y2, x2 = rect
    h, w = y2 - y1, x2 - x1
    if h * w <= 1:
        return []
    g1 = int(np.sqrt(splits))
    if g1 * g1 == splits:
        rows, cols = g1, g1
    else:
        rows, cols = g1, -(-splits // g1)
    if w < h:
        rows, cols = max(rows, cols), min(rows, cols)
    else:
        rows, cols = min(rows, cols), max(rows, cols)
    ys = np.unique(np.linspace(y1, y2, rows + 1).round().astype(int))
    xs = np.unique(np.linspace(x1, x2, cols + 1).round().astype(int))
    out = []
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            out.append((int(ys[i]), int(xs[j]), int(ys[i + 1]), int(xs[j + 1])))
    return out


def rex_map(
    image: Image,
    detector,
    target: TargetSpec,
    depth: int = 4,
    splits_per_level: int = 4,
    samples_per_level: int = 20,
    masking_value: float = 0.0,
    seed: int = 0,
) -> ResponsibilityMap:
    """Recursive-partition responsibility with 1/k credit.

    Each level partitions the currently credited rectangles into parts and
    evaluates random keep-subsets of those parts (all other pixels masked to
    masking_value). A subset passes when the masked image still satisfies
    the target (for the absence target: when the detector returns nothing).
    Every part of an inclusion-minimal nonempty passing subset earns
    responsibility 1/k, k the subset size, and credited parts are recursed
    into. Parts never credited score 0.

    Detection targets spend the first level-0 evaluation probing the fully
    masked image; if the masking value alone satisfies the target, no pixel
    is necessary and the all-zero map is returned flagged degenerate.

    Issues at most depth * samples_per_level detector calls. Candidate
    (level, s) draws from the stream keyed by
    seed + level * samples_per_level + s.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if splits_per_level < 2:
        raise ValueError("splits_per_level must be >= 2")
    if samples_per_level < 1:
        raise ValueError("samples_per_level must be >= 1")

    height, width = image.height, image.width
    resp = np.zeros((height, width), dtype=np.float64)
    active: list[tuple[int, int, int, int]] = [(0, 0, height, width)]

    def passes(keep: np.ndarray) -> bool:
        masked = apply_masking_value(image, keep, masking_value)
        return target_satisfied(detector.detect(masked), target)

    for level in range(depth):
        parts: list[tuple[int, int, int, int]] = []
        for rect in active:
            parts.extend(_split_rect(rect, splits_per_level))
        if not parts:
            break

        passing: set[frozenset[int]] = set()
        for s in range(samples_per_level):
            if level == 0 and s == 0 and target.kind == "detection":
                # probe: does the masking value alone satisfy the target?
                if passes(np.zeros((height, width), dtype=bool)):
                    return ResponsibilityMap(
                        values=np.zeros((height, width)), degenerate=True
                    )
                continue
            draws = uniforms(seed + level * samples_per_level + s, len(parts))
            chosen = np.flatnonzero(draws < 0.5)
            if chosen.size == 0:
                continue
            keep = np.zeros((height, width), dtype=bool)
            for i in chosen:
                py1, px1, py2, px2 = parts[i]
                keep[py1:py2, px1:px2] = True
            if passes(keep):
                passing.add(frozenset(int(i) for i in chosen))

        minimal = [s for s in passing if not any(t < s for t in passing)]
        credited: set[int] = set()
        for subset in minimal:
            weight = 1.0 / len(subset)
            for i in subset:
                py1, px1, py2, px2 = parts[i]
                resp[py1:py2, px1:px2] += weight
                credited.add(i)
        if not credited:
            break
        active = [parts[i] for i in sorted(credited)]

    return ResponsibilityMap.from_raw(resp)
