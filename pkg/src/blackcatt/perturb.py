"""Single-step perturbation primitives and the region-restricted attack.

Four kinds: Gaussian blur, additive Gaussian noise, small spatial shift,
uniform pixel-value offset. Strengths use 8-bit conventions (noise sigma
and value offsets in 0-255 units, blur radius and shifts in pixels) and are
converted to the [0,1] domain internally. All kinds write only inside the
requested region; pixels outside are bit-identical to the input.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter

from .gateway import Detection, Detector, Outcome, classify_outcome
from .imagecore import BoundingBox, Image, quantize
from .metrics import MetricBundle, metric_bundle
from .msps import Msps, checkpoint_masks
from .rng import normals

__all__ = [
    "PERTURBATION_KINDS",
    "NOISE_SIGMAS",
    "BLUR_RADII",
    "SHIFT_OFFSETS",
    "PIXEL_DELTAS",
    "PerturbationSpec",
    "AttackResult",
    "perturb_region",
    "boundary_band_mask",
    "single_step_attack",
    "default_single_step_grid",
]

log = logging.getLogger(__name__)

PERTURBATION_KINDS = ("blur", "noise", "shift", "pixel_value")

NOISE_SIGMAS = (5, 10, 20, 40)
BLUR_RADII = (1, 2, 3)
SHIFT_OFFSETS = tuple(
    (dx, dy) for dx in (-2, -1, 1, 2) for dy in (-2, -1, 1, 2)
)
PIXEL_DELTAS = (-40, -20, -10, 10, 20, 40)


@dataclass(frozen=True, slots=True)
class PerturbationSpec:
    kind: str
    strength: float | tuple[int, int]
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "shift":
            if (
                not isinstance(self.strength, tuple)
                or len(self.strength) != 2
                or not all(isinstance(v, int) for v in self.strength)
            ):
                raise ValueError("shift strength is an integer (dx, dy) pair")
        else:
            if not isinstance(self.strength, (int, float)):
                raise ValueError(f"{self.kind} strength must be numeric")
            if self.kind in ("blur", "noise") and self.strength < 0:
                raise ValueError(f"{self.kind} strength must be >= 0")

    def to_dict(self) -> dict:
        strength = list(self.strength) if self.kind == "shift" else self.strength
        return {"kind": self.kind, "strength": strength, "seed": self.seed}

    @classmethod
    def from_dict(cls, payload: dict) -> "PerturbationSpec":
        strength = payload["strength"]
        if payload["kind"] == "shift":
            strength = (int(strength[0]), int(strength[1]))
        return cls(kind=payload["kind"], strength=strength, seed=int(payload.get("seed", 0)))


def default_single_step_grid() -> list[PerturbationSpec]:
    """Canonical evaluation order: blur, noise, shift, pixel_value."""
    grid: list[PerturbationSpec] = []
    grid.extend(PerturbationSpec("blur", float(r)) for r in BLUR_RADII)
    grid.extend(PerturbationSpec("noise", float(s)) for s in NOISE_SIGMAS)
    grid.extend(PerturbationSpec("shift", offset) for offset in SHIFT_OFFSETS)
    grid.extend(PerturbationSpec("pixel_value", float(d)) for d in PIXEL_DELTAS)
    return grid


def perturb_region(image: Image, region: np.ndarray, spec: PerturbationSpec) -> Image:
    """Apply one perturbation, writing only inside `region`.

    blur: Gaussian filter with sigma = radius (reads cross the region
    boundary, writes do not). noise: per-element N(0, sigma/255), sampled
    over the full image from `spec.seed` so a pixel's noise is independent
    of the region shape, then added inside the region. shift: region pixels
    sampled from (x - dx, y - dy) with reads clamped to the image edge.
    pixel_value: delta/255 added inside the region. noise/pixel_value
    outputs are clamped to [0, 1].
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != (image.height, image.width):
        raise ValueError("region does not match image dimensions")
    if not region.any():
        log.info("zero-area region: %s is the identity", spec.kind)
        return image.with_data(image.data)

    data = image.data
    region3 = region[:, :, np.newaxis]
    if spec.kind == "blur":
        blurred = gaussian_filter(
            data, sigma=(float(spec.strength), float(spec.strength), 0.0),
            truncate=2.0, mode="nearest",
        )
        out = np.where(region3, blurred, data)
    elif spec.kind == "noise":
        draws = normals(spec.seed, data.size).reshape(data.shape)
        noisy = np.clip(data + draws * (float(spec.strength) / 255.0), 0.0, 1.0)
        out = np.where(region3, noisy, data)
    elif spec.kind == "shift":
        dx, dy = spec.strength
        ys = np.clip(np.arange(image.height) - dy, 0, image.height - 1)
        xs = np.clip(np.arange(image.width) - dx, 0, image.width - 1)
        shifted = data[ys[:, np.newaxis], xs[np.newaxis, :], :]
        out = np.where(region3, shifted, data)
    else:  # pixel_value
        offset = np.clip(data + float(spec.strength) / 255.0, 0.0, 1.0)
        out = np.where(region3, offset, data)
    return image.with_data(out)


def boundary_band_mask(
    bbox: BoundingBox, band_width: int, height: int, width: int
) -> np.ndarray:
    """Pixels within Chebyshev distance band_width of the box border.

    The border is the outermost pixel ring of the half-open box; the band
    extends to both sides and is clipped to the image.
    """
    if band_width < 1:
        raise ValueError("band_width must be >= 1")
    yy, xx = np.mgrid[0:height, 0:width]
    dx_out = np.maximum(np.maximum(bbox.x1 - xx, xx - (bbox.x2 - 1)), 0)
    dy_out = np.maximum(np.maximum(bbox.y1 - yy, yy - (bbox.y2 - 1)), 0)
    outside = np.maximum(dx_out, dy_out)
    depth = np.minimum(
        np.minimum(xx - bbox.x1, bbox.x2 - 1 - xx),
        np.minimum(yy - bbox.y1, bbox.y2 - 1 - yy),
    )
    distance = np.where(outside > 0, outside, np.maximum(depth, 0))
    return distance <= band_width


@dataclass(frozen=True, slots=True, eq=False)
class AttackResult:
    """One perturbation, one detector call, classified outcome."""

    outcome: Outcome
    perturbed: Image
    changed_area: int
    distances: MetricBundle
    queries: int
    spec: PerturbationSpec
    side: str
    skipped: bool = False


def single_step_attack(
    image: Image,
    original: Detection,
    msps: Msps,
    side: str,
    spec: PerturbationSpec,
    detector: Detector,
    iou_match: float = 0.5,
    lpips_fn: Callable[[Image, Image], float] | None = None,
) -> AttackResult:
    """Perturb one checkpoint of the sufficient set and classify the outcome."""
    if side not in ("inside", "outside"):
        raise ValueError("side must be 'inside' or 'outside'")
    checkpoint = {cp.name: cp for cp in checkpoint_masks(msps, original.bbox)}[side]
    if checkpoint.skippable:
        log.info("empty %s checkpoint: single-step %s skipped", side, spec.kind)
        return AttackResult(
            outcome=Outcome.UNCHANGED,
            perturbed=image,
            changed_area=0,
            distances=MetricBundle(0.0, 0.0, 0.0, 0.0, 1.0, None),
            queries=0,
            spec=spec,
            side=side,
            skipped=True,
        )

    # snap to the 8-bit grid before the query so stored PNGs replay exactly
    perturbed = quantize(perturb_region(image, checkpoint.mask, spec))
    outcome = classify_outcome(original, detector.detect(perturbed), iou_match)
    changed = int((perturbed.data != image.data).any(axis=2).sum())
    return AttackResult(
        outcome=outcome,
        perturbed=perturbed,
        changed_area=changed,
        distances=metric_bundle(image, perturbed, lpips_fn),
        queries=1,
        spec=spec,
        side=side,
    )
