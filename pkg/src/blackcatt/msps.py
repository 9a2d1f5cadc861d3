"""Minimal sufficient pixel sets and their spatial relation to boxes.

A sufficient set is one whose retention (all other pixels replaced by the
masking value) still makes the detector produce the target detection.
Extraction ranks pixels by responsibility, groups them into rank chunks,
binary-searches the smallest sufficient prefix, then trims chunks from the
lowest rank upward. Minimality is therefore chunk-granular: dropping the
lowest-ranked retained chunk breaks sufficiency.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .gateway import Detector
from .imagecore import BoundingBox, Image, apply_masking_value, load_png, save_png
from .saliency import ResponsibilityMap, TargetSpec, match_confidence

__all__ = [
    "ExtractionError",
    "Msps",
    "Checkpoint",
    "extract_msps",
    "fin",
    "dice",
    "overlap_class",
    "checkpoint_masks",
    "map_hash",
]

log = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    """No sufficient pixel prefix exists for the requested target."""


def map_hash(source_map: ResponsibilityMap) -> str:
    return hashlib.sha256(source_map.payload_bytes()).hexdigest()


@dataclass(frozen=True, slots=True, eq=False)
class Msps:
    """A pixel mask sufficient for the target, approximately minimal.

    sufficiency_confidence is the matched detection's confidence from the
    most recent detector call whose kept set equalled this exact mask.
    """

    mask: np.ndarray
    source_map: ResponsibilityMap | None
    masking_value: float | tuple[float, ...]
    sufficiency_confidence: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        mask = np.array(self.mask, dtype=bool, copy=True)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def empty(self) -> bool:
        return self.size == 0

    def sidecar(self) -> dict:
        value = self.masking_value
        return {
            "masking_value": list(value) if isinstance(value, tuple) else float(value),
            "sufficiency_confidence": float(self.sufficiency_confidence),
            "source_map_hash": map_hash(self.source_map) if self.source_map else None,
        }

    def save(self, path_base: str | Path) -> tuple[Path, Path]:
        base = Path(path_base)
        png_path = base.with_suffix(".png")
        sidecar_path = base.with_suffix(".json")
        bitmap = Image(self.mask.astype(np.float64)[:, :, np.newaxis])
        save_png(bitmap, png_path)
        sidecar_path.write_text(json.dumps(self.sidecar(), sort_keys=True, indent=2))
        return png_path, sidecar_path

    @classmethod
    def load(cls, path_base: str | Path, source_map: ResponsibilityMap | None = None) -> "Msps":
        base = Path(path_base)
        bitmap = load_png(base.with_suffix(".png"))
        sidecar = json.loads(base.with_suffix(".json").read_text())
        if source_map is not None and sidecar.get("source_map_hash") not in (None, map_hash(source_map)):
            raise ValueError("source map does not match sidecar hash")
        value = sidecar["masking_value"]
        mask = bitmap.data[:, :, 0] > 0.5
        return cls(
            mask=mask,
            source_map=source_map,
            masking_value=tuple(value) if isinstance(value, list) else float(value),
            sufficiency_confidence=float(sidecar["sufficiency_confidence"]),
            degenerate=bool(not mask.any()),
        )


def extract_msps(
    image: Image,
    source_map: ResponsibilityMap,
    detector: Detector,
    target: TargetSpec,
    masking_value: float | tuple[float, ...] = 0.0,
    rank_chunks: int = 64,
) -> Msps:
    """Smallest sufficient rank-chunk prefix, then lowest-rank-first trim.

    Pixels are ranked by descending map value (ties row-major), split into
    rank_chunks near-equal chunks. Binary search finds the smallest prefix
    whose retention satisfies the target; the search interval starts at
    [0, chunks] with the full prefix known sufficient (it is the unmodified
    image). Trimming then tries to drop each retained chunk from the lowest
    rank upward, keeping drops that preserve sufficiency. The first trim
    candidate equals the prefix one shorter, which the search already
    proved insufficient, so it is skipped without a query. Total detector
    calls never exceed ceil(log2(chunks)) + chunks.
    """
    if source_map.degenerate:
        raise ValueError("cannot extract from a degenerate map")
    if source_map.values.shape != (image.height, image.width):
        raise ValueError("map does not match image dimensions")
    if rank_chunks < 1:
        raise ValueError("rank_chunks must be >= 1")

    order = np.argsort(-source_map.values.ravel(), kind="stable")
    chunks = [c for c in np.array_split(order, rank_chunks) if c.size]
    n = len(chunks)
    shape = (image.height, image.width)

    def query(chunk_ids: list[int]) -> tuple[bool, float]:
        keep = np.zeros(shape, dtype=bool).ravel()
        for c in chunk_ids:
            keep[chunks[c]] = True
        keep = keep.reshape(shape)
        detections = detector.detect(apply_masking_value(image, keep, masking_value))
        conf = match_confidence(detections, target)
        return (conf is not None), (conf if conf is not None else 0.0)

    lo, hi = 0, n
    prefix_conf: float | None = None
    while lo < hi:
        mid = (lo + hi) // 2
        ok, conf = query(list(range(mid)))
        if ok:
            hi = mid
            prefix_conf = conf
        else:
            lo = mid + 1
    k = lo

    if k == 0:
        log.info("masking value alone satisfies the target; empty set flagged")
        return Msps(
            mask=np.zeros(shape, dtype=bool),
            source_map=source_map,
            masking_value=masking_value,
            sufficiency_confidence=prefix_conf if prefix_conf is not None else 0.0,
            degenerate=True,
        )

    current = list(range(k))
    confirmed = prefix_conf
    for candidate in range(k - 1, -1, -1):
        trial = [c for c in current if c != candidate]
        if candidate == k - 1 and len(current) == k:
            continue  # equals prefix(k-1), proven insufficient by the search
        ok, conf = query(trial)
        if ok:
            current = trial
            confirmed = conf

    if confirmed is None:
        ok, conf = query(current)
        if not ok:
            raise ExtractionError("no sufficient pixel prefix exists")
        confirmed = conf

    keep = np.zeros(shape, dtype=bool).ravel()
    for c in current:
        keep[chunks[c]] = True
    return Msps(
        mask=keep.reshape(shape),
        source_map=source_map,
        masking_value=masking_value,
        sufficiency_confidence=confirmed,
        degenerate=False,
    )


def _as_mask(msps: "Msps | np.ndarray") -> np.ndarray:
    if isinstance(msps, Msps):
        return msps.mask
    return np.asarray(msps, dtype=bool)


def _box_mask(shape: tuple[int, int], bbox: BoundingBox) -> np.ndarray:
    """Pixel mask of the box clipped to the image."""
    mask = np.zeros(shape, dtype=bool)
    mask[bbox.y1 : min(bbox.y2, shape[0]), bbox.x1 : min(bbox.x2, shape[1])] = True
    return mask


def fin(msps: "Msps | np.ndarray", bbox: BoundingBox) -> float:
    """Fraction of the set inside the box; NaN for an empty set."""
    mask = _as_mask(msps)
    total = int(mask.sum())
    if total == 0:
        return float("nan")
    inside = int((mask & _box_mask(mask.shape, bbox)).sum())
    return float(Fraction(inside, total))


def dice(msps: "Msps | np.ndarray", bbox: BoundingBox) -> float:
    """2 * overlap / (set size + box size); NaN when both are empty."""
    mask = _as_mask(msps)
    box = _box_mask(mask.shape, bbox)
    denom = int(mask.sum()) + int(box.sum())
    if denom == 0:
        return float("nan")
    return float(Fraction(2 * int((mask & box).sum()), denom))


def overlap_class(msps: "Msps | np.ndarray", bbox: BoundingBox) -> str:
    ratio = fin(msps, bbox)
    if ratio != ratio:
        raise ValueError("overlap class undefined for an empty set")
    if ratio == 0.0:
        return "no_overlap"
    if ratio == 1.0:
        return "full_overlap"
    return "partial_overlap"


@dataclass(frozen=True, slots=True, eq=False)
class Checkpoint:
    """One region of the sufficient set an attack may restrict itself to."""

    name: str
    mask: np.ndarray

    @property
    def skippable(self) -> bool:
        return not bool(self.mask.any())


def checkpoint_masks(msps: "Msps | np.ndarray", bbox: BoundingBox) -> list[Checkpoint]:
    """[outside-box part, inside-box part, whole set], empties skippable."""
    mask = _as_mask(msps)
    box = _box_mask(mask.shape, bbox)
    return [
        Checkpoint("outside", mask & ~box),
        Checkpoint("inside", mask & box),
        Checkpoint("full", mask.copy()),
    ]
