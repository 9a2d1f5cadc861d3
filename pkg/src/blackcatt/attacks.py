"""Map-guided black-box attacks against a single detection.

Two search strategies over the detector-query budget:

- attack_bl: additive noise restricted to checkpoint masks intersected
  with the support of the combined map (target map + absence map), swept
  over noise strengths, then refined by jointly shrinking mask size (rank
  prefix of the combined map) and noise strength.
- attack_mog: the target map's peaks become a mixture-of-Gaussians field
  P(X) = sum_i alpha_i * exp(-||X - p_i||^2 / (2 sigma_i^2)); the image is
  perturbed as X + delta * P(X) with delta ~ N(0, gamma/255). Search is
  over peak count, checkpoint, and spatial sigma; refinement lowers the
  noise strength over the best field.

Per-goal incumbents (no_prediction, prediction_changed,
added_new_prediction) are updated through metrics_improve, so refinement
never worsens an achieved goal's distance. Every candidate draws from a
stream keyed by seed + candidate index over the full deterministic grid
(skipped candidates still consume their index), making results independent
of evaluation concurrency.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .gateway import ATTACK_GOALS, Detection, Detector, classify_outcome
from .imagecore import Image, quantize
from .metrics import MetricBundle, metric_bundle
from .msps import Msps, checkpoint_masks
from .perturb import PerturbationSpec, perturb_region, boundary_band_mask
from .rng import normals
from .saliency import ResponsibilityMap, combine_maps

__all__ = [
    "AttackBudget",
    "GaussianPeak",
    "AttackRecord",
    "GOAL_NAMES",
    "metrics_improve",
    "inapplicable_records",
    "topk_peaks",
    "mog_field",
    "apply_mog",
    "sigma_schedule",
    "mask_size_schedule",
    "default_nms_radius",
    "attack_bl",
    "attack_mog",
    "apply_refinement",
    "baseline_attack",
]

log = logging.getLogger(__name__)

#: Goal keys used in result dicts (plain strings, canonical order).
GOAL_NAMES = tuple(goal.value for goal in ATTACK_GOALS)


@dataclass(frozen=True, slots=True)
class AttackBudget:
    """Search grids. Defaults: noise strengths spanning [5, 40] (8-bit
    units), spatial sigmas in pixels, peak counts spanning [3, 15]."""

    gammas: tuple[float, ...] = (5.0, 10.0, 20.0, 40.0)
    sigmas: tuple[float, ...] = (2.0, 4.0, 8.0)
    topk_list: tuple[int, ...] = (3, 5, 7, 9, 11, 13, 15)
    max_queries: int = 0

    def __post_init__(self) -> None:
        for name in ("gammas", "sigmas", "topk_list"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} must be nonempty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if self.max_queries < 0:
            raise ValueError("max_queries must be >= 0 (0 = unlimited)")

    def to_dict(self) -> dict:
        return {
            "gammas": list(self.gammas),
            "sigmas": list(self.sigmas),
            "topk_list": list(self.topk_list),
            "max_queries": self.max_queries,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AttackBudget":
        return cls(
            gammas=tuple(payload.get("gammas", cls.gammas)),
            sigmas=tuple(payload.get("sigmas", cls.sigmas)),
            topk_list=tuple(int(k) for k in payload.get("topk_list", cls.topk_list)),
            max_queries=int(payload.get("max_queries", 0)),
        )


@dataclass(frozen=True, slots=True)
class GaussianPeak:
    y: int
    x: int
    sigma: float = 1.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True, slots=True, eq=False)
class AttackRecord:
    """Best attack found for one goal; queries is the run's total count."""

    goal: str
    mask_or_field: np.ndarray | None
    perturbed: Image
    spec: dict
    distances: MetricBundle
    queries: int
    achieved: bool


def metrics_improve(
    candidate: AttackRecord, incumbent: AttackRecord | None, goal: str
) -> bool:
    """True iff candidate achieves `goal` and strictly improves.

    Ordering: achieving the goal dominates; then lower L2; L2 ties break
    by LPIPS when both sides have one; remaining ties by lower L0.
    """
    if candidate.goal != goal or not candidate.achieved:
        return False
    if incumbent is None or not incumbent.achieved:
        return True
    ours, theirs = candidate.distances, incumbent.distances
    if ours.l2 != theirs.l2:
        return ours.l2 < theirs.l2
    if ours.lpips is not None and theirs.lpips is not None and ours.lpips != theirs.lpips:
        return ours.lpips < theirs.lpips
    return ours.l0 < theirs.l0


def default_nms_radius(height: int, width: int) -> int:
    return max(2, math.ceil(min(height, width) / 32))


def topk_peaks(
    source_map: ResponsibilityMap,
    restrict: np.ndarray,
    k: int,
    nms_radius: int,
    sigma: float = 1.0,
) -> list[GaussianPeak]:
    """Greedy local maxima of the map restricted to a mask.

    Peaks are selected in descending map value (ties row-major); each
    selection suppresses everything within Chebyshev distance nms_radius.
    Fewer than k are returned when the region exhausts; an empty or
    all-zero region yields an empty list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if nms_radius < 0:
        raise ValueError("nms_radius must be >= 0")
    restrict = np.asarray(restrict, dtype=bool)
    if restrict.shape != source_map.values.shape:
        raise ValueError("restrict mask does not match map dimensions")

    working = np.where(restrict, source_map.values, 0.0)
    height, width = working.shape
    peaks: list[GaussianPeak] = []
    for _ in range(k):
        flat = int(np.argmax(working))
        value = float(working.ravel()[flat])
        if value <= 0.0:
            break
        y, x = divmod(flat, width)
        peaks.append(GaussianPeak(y=y, x=x, sigma=sigma, alpha=value))
        y1, y2 = max(0, y - nms_radius), min(height, y + nms_radius + 1)
        x1, x2 = max(0, x - nms_radius), min(width, x + nms_radius + 1)
        working[y1:y2, x1:x2] = 0.0
    return peaks


def mog_field(peaks: list[GaussianPeak], height: int, width: int) -> np.ndarray:
    """P(X) = sum_i alpha_i * exp(-||X - p_i||^2 / (2 sigma_i^2))."""
    if not peaks:
        raise ValueError("need at least one peak")
    ys = np.arange(height, dtype=np.float64)[:, np.newaxis]
    xs = np.arange(width, dtype=np.float64)[np.newaxis, :]
    out = np.zeros((height, width), dtype=np.float64)
    for peak in peaks:
        if peak.sigma <= 0:
            raise ValueError("sigma must be positive")
        d2 = (ys - peak.y) ** 2 + (xs - peak.x) ** 2
        out += peak.alpha * np.exp(-d2 / (2.0 * peak.sigma**2))
    return out


def apply_mog(image: Image, mog: np.ndarray, gamma: float, seed: int) -> Image:
    """X + delta * P(X) with delta ~ N(0, gamma/255), clamped to [0, 1].

    Pixels where the field is zero stay bit-identical to the input.
    """
    mog = np.asarray(mog, dtype=np.float64)
    if mog.shape != (image.height, image.width):
        raise ValueError("field does not match image dimensions")
    if gamma == 0:
        return image.with_data(image.data)
    data = image.data
    delta = normals(seed, data.size).reshape(data.shape) * (float(gamma) / 255.0)
    field3 = mog[:, :, np.newaxis]
    out = np.clip(data + delta * field3, 0.0, 1.0)
    return image.with_data(np.where(field3 > 0, out, data))


def sigma_schedule(
    sigma_base: float,
    geometric_points: int = 5,
    linear_points: int = 5,
    floor_ratio: float = 0.05,
) -> list[float]:
    """Descending union of a geometric and a linear ladder.

    Both run from sigma_base down to floor_ratio * sigma_base with exact
    shared endpoints, so after deduplication the default 5 + 5 always
    yields 8 strengths (the interior points of the two ladders can never
    coincide: r^t is strictly convex in t and 1 - t(1-r) is its chord).
    """
    if sigma_base <= 0:
        raise ValueError("sigma_base must be positive")
    if geometric_points < 2 or linear_points < 2:
        raise ValueError("schedules need at least 2 points")
    if not 0.0 < floor_ratio < 1.0:
        raise ValueError("floor_ratio must lie in (0, 1)")
    floor = sigma_base * floor_ratio
    geometric = np.geomspace(sigma_base, floor, geometric_points)
    linear = np.linspace(sigma_base, floor, linear_points)
    return sorted({float(v) for v in (*geometric, *linear)}, reverse=True)


def mask_size_schedule(
    n_support: int, points: int = 12, floor_fraction: float = 0.01
) -> list[int]:
    """Ascending unique pixel counts, geometric from 1% to 100% of support."""
    if n_support < 1:
        raise ValueError("support must be nonempty")
    if points < 2:
        raise ValueError("schedule needs at least 2 points")
    if not 0.0 < floor_fraction <= 1.0:
        raise ValueError("floor_fraction must lie in (0, 1]")
    fractions = [floor_fraction ** (1.0 - i / (points - 1)) for i in range(points)]
    return sorted({min(n_support, max(1, math.ceil(f * n_support))) for f in fractions})


@dataclass
class _Engine:
    """Per-attack evaluation state: query count and per-goal incumbents."""

    detector: Detector
    image: Image
    original: Detection
    iou_match: float
    lpips_fn: Callable[[Image, Image], float] | None
    max_queries: int = 0
    queries: int = 0
    incumbents: dict[str, AttackRecord | None] = field(
        default_factory=lambda: {goal: None for goal in GOAL_NAMES}
    )

    @property
    def exhausted(self) -> bool:
        if self.max_queries and self.queries >= self.max_queries:
            log.info("query budget %d exhausted", self.max_queries)
            return True
        return False

    @property
    def any_achieved(self) -> bool:
        return any(r is not None for r in self.incumbents.values())

    def evaluate(self, perturbed: Image, mask_or_field, spec: dict) -> None:
        # candidates are snapped to the 8-bit grid before querying so the
        # stored PNG of an achieved record replays bit-exactly
        perturbed = quantize(perturbed)
        detections = self.detector.detect(perturbed)
        self.queries += 1
        outcome = classify_outcome(self.original, detections, self.iou_match)
        goal = outcome.value
        if goal not in self.incumbents:
            return
        candidate = AttackRecord(
            goal=goal,
            mask_or_field=mask_or_field,
            perturbed=perturbed,
            spec=spec,
            distances=metric_bundle(self.image, perturbed, self.lpips_fn),
            queries=0,
            achieved=True,
        )
        if metrics_improve(candidate, self.incumbents[goal], goal):
            self.incumbents[goal] = candidate

    def best(self) -> AttackRecord:
        achieved = [r for r in self.incumbents.values() if r is not None]
        if not achieved:
            raise ValueError("no achieved incumbent")
        return min(
            achieved, key=lambda r: (r.distances.l2, GOAL_NAMES.index(r.goal))
        )

    def finalize(self) -> dict[str, AttackRecord]:
        out = {}
        for goal in GOAL_NAMES:
            record = self.incumbents[goal]
            if record is None:
                record = AttackRecord(
                    goal=goal,
                    mask_or_field=None,
                    perturbed=self.image,
                    spec={},
                    distances=MetricBundle(0.0, 0.0, 0.0, 0.0, 1.0, None),
                    queries=0,
                    achieved=False,
                )
            out[goal] = replace(record, queries=self.queries)
        return out


def inapplicable_records(image: Image, reason: str) -> dict[str, AttackRecord]:
    log.info("attack inapplicable: %s", reason)
    return {
        goal: AttackRecord(
            goal=goal,
            mask_or_field=None,
            perturbed=image,
            spec={"inapplicable": reason},
            distances=MetricBundle(0.0, 0.0, 0.0, 0.0, 1.0, None),
            queries=0,
            achieved=False,
        )
        for goal in GOAL_NAMES
    }


def _refine_ranked(
    engine: _Engine,
    ranked_values: np.ndarray,
    sigma_base: float,
    seed: int,
    mask_points: int,
    geometric_points: int,
    linear_points: int,
    floor_ratio: float,
) -> None:
    """Joint (mask size, noise strength) sweep over the rank prefix masks."""
    n_support = int(np.count_nonzero(ranked_values))
    if n_support == 0:
        log.info("empty refinement support, pass skipped")
        return
    order = np.argsort(-ranked_values.ravel(), kind="stable")
    sizes = mask_size_schedule(n_support, points=mask_points)
    strengths = sigma_schedule(sigma_base, geometric_points, linear_points, floor_ratio)
    shape = ranked_values.shape
    for ki, k in enumerate(sizes):
        mask = np.zeros(ranked_values.size, dtype=bool)
        mask[order[:k]] = True
        mask = mask.reshape(shape)
        for si, strength in enumerate(strengths):
            if engine.exhausted:
                return
            index = ki * len(strengths) + si
            spec = {
                "method": "bl_refine",
                "gamma": strength,
                "mask_size": k,
                "seed": seed + index,
            }
            perturbed = perturb_region(
                engine.image, mask, PerturbationSpec("noise", float(strength), seed + index)
            )
            engine.evaluate(perturbed, mask, spec)


def _refine_field(
    engine: _Engine,
    mog: np.ndarray,
    sigma_base: float,
    seed: int,
    geometric_points: int,
    linear_points: int,
    floor_ratio: float,
) -> None:
    """Noise-strength ladder over a fixed mixture field."""
    strengths = sigma_schedule(sigma_base, geometric_points, linear_points, floor_ratio)
    for si, strength in enumerate(strengths):
        if engine.exhausted:
            return
        spec = {"method": "mog_refine", "gamma": strength, "seed": seed + si}
        perturbed = apply_mog(engine.image, mog, strength, seed + si)
        engine.evaluate(perturbed, mog, spec)


def apply_refinement(
    image: Image,
    detector: Detector,
    mask_or_field: np.ndarray,
    incumbents: dict[str, "AttackRecord | None"],
    *,
    original: Detection,
    kind: str,
    sigma_base: float | None = None,
    seed: int = 0,
    iou_match: float = 0.5,
    lpips_fn: Callable[[Image, Image], float] | None = None,
    mask_points: int = 12,
    geometric_points: int = 5,
    linear_points: int = 5,
    floor_ratio: float = 0.05,
) -> dict[str, AttackRecord]:
    """Standalone improvement pass over existing incumbents.

    kind "ranked_mask" sweeps (mask size x strength) using mask_or_field as
    the ranking values; kind "field" sweeps strength over a fixed field.
    sigma_base defaults to the best incumbent's recorded gamma. Returned
    records' query counts cover this pass only.
    """
    if kind not in ("ranked_mask", "field"):
        raise ValueError("kind must be 'ranked_mask' or 'field'")
    engine = _Engine(
        detector=detector,
        image=image,
        original=original,
        iou_match=iou_match,
        lpips_fn=lpips_fn,
    )
    engine.incumbents.update(
        {goal: incumbents.get(goal) for goal in GOAL_NAMES if incumbents.get(goal)}
    )
    if not engine.any_achieved:
        raise ValueError("refinement needs at least one achieved incumbent")
    if sigma_base is None:
        sigma_base = engine.best().spec.get("gamma")
        if sigma_base is None:
            raise ValueError("sigma_base not given and best incumbent has no gamma")
    if kind == "ranked_mask":
        _refine_ranked(
            engine, mask_or_field, sigma_base, seed,
            mask_points, geometric_points, linear_points, floor_ratio,
        )
    else:
        _refine_field(
            engine, mask_or_field, sigma_base, seed,
            geometric_points, linear_points, floor_ratio,
        )
    return engine.finalize()


def attack_bl(
    detector: Detector,
    image: Image,
    original: Detection,
    budget: AttackBudget,
    r_map: ResponsibilityMap,
    rbar_map: ResponsibilityMap,
    msps: Msps,
    *,
    seed: int = 0,
    iou_match: float = 0.5,
    lpips_fn: Callable[[Image, Image], float] | None = None,
    refine: bool = True,
    mask_points: int = 12,
    geometric_points: int = 5,
    linear_points: int = 5,
    floor_ratio: float = 0.05,
) -> dict[str, AttackRecord]:
    """Noise on checkpoint-restricted supports of the combined map.

    Search queries = |gammas| * (checkpoints with nonempty effective
    mask); refinement adds |mask sizes| * |strength ladder| more.
    """
    if r_map.degenerate or rbar_map.degenerate:
        return inapplicable_records(image, "degenerate responsibility map")
    combined = combine_maps(r_map, rbar_map)
    if combined.degenerate:
        return inapplicable_records(image, "degenerate combined map")

    engine = _Engine(
        detector=detector,
        image=image,
        original=original,
        iou_match=iou_match,
        lpips_fn=lpips_fn,
        max_queries=budget.max_queries,
    )
    checkpoints = checkpoint_masks(msps, original.bbox)
    support = combined.support
    for gi, gamma in enumerate(budget.gammas):
        for ci, checkpoint in enumerate(checkpoints):
            index = gi * len(checkpoints) + ci
            mask = checkpoint.mask & support
            if not mask.any():
                log.info("empty %s checkpoint mask, skipped", checkpoint.name)
                continue
            if engine.exhausted:
                break
            spec = {
                "method": "bl",
                "gamma": gamma,
                "checkpoint": checkpoint.name,
                "seed": seed + index,
            }
            perturbed = perturb_region(
                image, mask, PerturbationSpec("noise", float(gamma), seed + index)
            )
            engine.evaluate(perturbed, mask, spec)

    if refine and engine.any_achieved:
        sigma_base = float(engine.best().spec["gamma"])
        if sigma_base > 0:
            ranked = np.where(msps.mask & support, combined.values, 0.0)
            grid_size = len(budget.gammas) * len(checkpoints)
            _refine_ranked(
                engine, ranked, sigma_base, seed + grid_size,
                mask_points, geometric_points, linear_points, floor_ratio,
            )
        else:
            log.info("best incumbent has zero strength, refinement skipped")
    return engine.finalize()


def attack_mog(
    detector: Detector,
    image: Image,
    original: Detection,
    budget: AttackBudget,
    r_map: ResponsibilityMap,
    msps: Msps,
    *,
    seed: int = 0,
    iou_match: float = 0.5,
    lpips_fn: Callable[[Image, Image], float] | None = None,
    refine: bool = True,
    nms_radius: int | None = None,
    geometric_points: int = 5,
    linear_points: int = 5,
    floor_ratio: float = 0.05,
) -> dict[str, AttackRecord]:
    """Mixture-of-Gaussians field attack; needs only the target's own map.

    Search queries = |topk_list| * (usable checkpoints) * |sigmas| at the
    strongest configured noise; refinement adds |strength ladder| more
    over the best incumbent's field.
    """
    if r_map.degenerate:
        return inapplicable_records(image, "degenerate responsibility map")
    checkpoints = checkpoint_masks(msps, original.bbox)
    if all(cp.skippable for cp in checkpoints):
        return inapplicable_records(image, "all checkpoints empty")
    if nms_radius is None:
        nms_radius = default_nms_radius(image.height, image.width)

    engine = _Engine(
        detector=detector,
        image=image,
        original=original,
        iou_match=iou_match,
        lpips_fn=lpips_fn,
        max_queries=budget.max_queries,
    )
    gamma_search = float(max(budget.gammas))
    n_sigmas = len(budget.sigmas)
    for ti, topk in enumerate(budget.topk_list):
        for ci, checkpoint in enumerate(checkpoints):
            base = (ti * len(checkpoints) + ci) * n_sigmas
            if checkpoint.skippable:
                log.info("empty %s checkpoint, skipped", checkpoint.name)
                continue
            peaks = topk_peaks(r_map, checkpoint.mask, topk, nms_radius)
            if not peaks:
                log.info("no peaks inside %s checkpoint, skipped", checkpoint.name)
                continue
            for si, sigma in enumerate(budget.sigmas):
                if engine.exhausted:
                    break
                index = base + si
                field_ = mog_field(
                    [replace(p, sigma=float(sigma)) for p in peaks],
                    image.height,
                    image.width,
                )
                spec = {
                    "method": "mog",
                    "topk": topk,
                    "checkpoint": checkpoint.name,
                    "sigma": sigma,
                    "gamma": gamma_search,
                    "seed": seed + index,
                }
                engine.evaluate(apply_mog(image, field_, gamma_search, seed + index), field_, spec)

    if refine and engine.any_achieved:
        best = engine.best()
        sigma_base = float(best.spec["gamma"])
        if sigma_base > 0:
            grid_size = len(budget.topk_list) * len(checkpoints) * n_sigmas
            _refine_field(
                engine, best.mask_or_field, sigma_base, seed + grid_size,
                geometric_points, linear_points, floor_ratio,
            )
        else:
            log.info("best incumbent has zero strength, refinement skipped")
    return engine.finalize()


def baseline_attack(
    kind: str,
    detector: Detector,
    image: Image,
    original: Detection,
    gammas: tuple[float, ...],
    band_width: int | None = None,
    *,
    seed: int = 0,
    iou_match: float = 0.5,
    lpips_fn: Callable[[Image, Image], float] | None = None,
) -> dict[str, AttackRecord]:
    """Undirected noise references: whole image, or a band around the box.

    Same incumbent logic as the guided attacks, no refinement pass.
    """
    if kind not in ("global_noise", "targeted_noise"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    if kind == "targeted_noise":
        if band_width is None:
            raise ValueError("targeted_noise requires band_width")
        mask = boundary_band_mask(original.bbox, band_width, image.height, image.width)
    else:
        mask = np.ones((image.height, image.width), dtype=bool)

    engine = _Engine(
        detector=detector,
        image=image,
        original=original,
        iou_match=iou_match,
        lpips_fn=lpips_fn,
    )
    for gi, gamma in enumerate(gammas):
        spec = {"method": kind, "gamma": gamma, "seed": seed + gi}
        perturbed = perturb_region(
            image, mask, PerturbationSpec("noise", float(gamma), seed + gi)
        )
        engine.evaluate(perturbed, mask, spec)
    return engine.finalize()
