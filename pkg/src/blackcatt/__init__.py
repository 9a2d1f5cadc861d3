"""Black-box adversarial attacks against object detectors.

Query-efficient attack strategies built on occlusion-based responsibility
maps and minimal sufficient pixel sets, with a seeded experiment harness,
perceptual distortion metrics, and a detector wire-protocol client.
"""

from .attacks import (
    AttackBudget,
    AttackRecord,
    GOAL_NAMES,
    apply_refinement,
    attack_bl,
    attack_mog,
    baseline_attack,
)
from .gateway import (
    ATTACK_GOALS,
    CachingDetector,
    Detection,
    DetectionSet,
    Detector,
    GatewayError,
    HttpDetector,
    Outcome,
    QueryCounter,
    SyntheticDetector,
    SyntheticScenario,
    classify_outcome,
    iou,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    ingest_dataset,
    run_experiment,
)
from .imagecore import BoundingBox, CodecError, Image, load_png, png_bytes, save_png
from .metrics import (
    DEFAULT_THRESHOLDS,
    LpipsClient,
    LpipsUnavailable,
    MetricBundle,
    metric_bundle,
    ssim,
    success_rate_curve,
)
from .msps import ExtractionError, Msps, checkpoint_masks, dice, extract_msps, fin, overlap_class
from .perturb import PerturbationSpec, boundary_band_mask, perturb_region, single_step_attack
from .saliency import ResponsibilityMap, TargetSpec, combine_maps, drise_map, rex_map
from .spatial_stats import (
    SpatialRecord,
    confidence_binned_summary,
    not_fully_contained_fraction,
    rank_correlations,
)

__version__ = "0.1.0"

__all__ = [
    "ATTACK_GOALS",
    "AttackBudget",
    "AttackRecord",
    "BoundingBox",
    "CachingDetector",
    "CodecError",
    "ConfigError",
    "DEFAULT_THRESHOLDS",
    "Detection",
    "DetectionSet",
    "Detector",
    "ExperimentConfig",
    "ExtractionError",
    "GOAL_NAMES",
    "GatewayError",
    "HttpDetector",
    "Image",
    "LpipsClient",
    "LpipsUnavailable",
    "MetricBundle",
    "Msps",
    "Outcome",
    "PerturbationSpec",
    "QueryCounter",
    "ResponsibilityMap",
    "SpatialRecord",
    "SyntheticDetector",
    "SyntheticScenario",
    "TargetSpec",
    "apply_refinement",
    "attack_bl",
    "attack_mog",
    "baseline_attack",
    "boundary_band_mask",
    "checkpoint_masks",
    "classify_outcome",
    "combine_maps",
    "confidence_binned_summary",
    "dice",
    "drise_map",
    "emit_report",
    "extract_msps",
    "fin",
    "ingest_dataset",
    "iou",
    "load_png",
    "metric_bundle",
    "not_fully_contained_fraction",
    "overlap_class",
    "perturb_region",
    "png_bytes",
    "rank_correlations",
    "rex_map",
    "run_experiment",
    "save_png",
    "single_step_attack",
    "ssim",
    "success_rate_curve",
    "__version__",
]
