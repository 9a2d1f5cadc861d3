"""Experiment protocol: ingestion, seeded runs, persistence, reports.

Runs stream one JSON record per image to records.jsonl (sorted keys, so
two identical runs produce byte-identical lines except for wall_time) and
are resumable: image ids already present are skipped. Every stochastic
choice derives from the config seed through per-image, per-role seeds, so
results do not depend on execution order or interruption points. Reports
are recomputed from the raw records on demand, never cached.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .attacks import (
    AttackBudget,
    AttackRecord,
    GOAL_NAMES,
    attack_bl,
    attack_mog,
    baseline_attack,
    inapplicable_records,
)
from .coco import COCO_CLASSES
from .gateway import (
    Detection,
    Detector,
    GatewayError,
    HttpDetector,
    SyntheticDetector,
    SyntheticScenario,
)
from .imagecore import CodecError, Image, load_png, png_bytes
from .metrics import (
    DEFAULT_THRESHOLDS,
    LpipsClient,
    MetricBundle,
    success_rate_curve,
)
from .msps import ExtractionError, Msps, dice, extract_msps, fin, overlap_class
from .perturb import default_single_step_grid, single_step_attack
from .saliency import ResponsibilityMap, TargetSpec, drise_map, rex_map
from .spatial_stats import (
    SpatialRecord,
    confidence_binned_summary,
    not_fully_contained_fraction,
    rank_correlations,
)

__all__ = [
    "METHODS",
    "ConfigError",
    "ExperimentConfig",
    "image_seed",
    "role_seed",
    "build_detector",
    "ingest_dataset",
    "run_experiment",
    "emit_report",
]

log = logging.getLogger(__name__)

METHODS = ("bl", "mog", "noise", "noise_targeted", "single_step")

# Disjoint seed lanes per role within one image; candidate indices inside a
# role stay far below the lane width.
_ROLE_OFFSETS = {
    "r_map": 0,
    "rbar_map": 1_000_000,
    "bl": 2_000_000,
    "mog": 3_000_000,
    "noise": 4_000_000,
    "noise_targeted": 5_000_000,
    "single_step": 6_000_000,
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    dataset_dir: str
    output_dir: str
    detector_url: str | None = None
    synthetic_scenario: str | None = None
    model: str | None = None
    conf_threshold: float = 0.25
    saliency_method: str = "rex"
    saliency_params: dict = field(default_factory=dict)
    methods: tuple[str, ...] = ("bl", "mog", "noise", "noise_targeted")
    budget: AttackBudget = field(default_factory=AttackBudget)
    thresholds: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_THRESHOLDS.items()})
    seed: int = 0
    masking_value: float = 0.0
    rank_chunks: int = 64
    iou_match: float = 0.5
    band_width: int = 2
    lpips_endpoint: str | None = None

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods: {unknown}")
        if (self.detector_url is None) == (self.synthetic_scenario is None):
            raise ConfigError("exactly one of detector_url / synthetic_scenario required")
        if self.saliency_method not in ("rex", "drise"):
            raise ConfigError(f"unknown saliency method {self.saliency_method!r}")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigError("conf_threshold outside [0, 1]")
        if self.band_width < 1:
            raise ConfigError("band_width must be >= 1")

    def to_dict(self) -> dict:
        return {
            "dataset_dir": self.dataset_dir,
            "output_dir": self.output_dir,
            "detector_url": self.detector_url,
            "synthetic_scenario": self.synthetic_scenario,
            "model": self.model,
            "conf_threshold": self.conf_threshold,
            "saliency_method": self.saliency_method,
            "saliency_params": self.saliency_params,
            "methods": list(self.methods),
            "budget": self.budget.to_dict(),
            "thresholds": self.thresholds,
            "seed": self.seed,
            "masking_value": self.masking_value,
            "rank_chunks": self.rank_chunks,
            "iou_match": self.iou_match,
            "band_width": self.band_width,
            "lpips_endpoint": self.lpips_endpoint,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        try:
            if "budget" in payload:
                payload["budget"] = AttackBudget.from_dict(payload["budget"])
            if "methods" in payload:
                payload["methods"] = tuple(payload["methods"])
            return cls(**payload)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        config = cls.from_dict(payload)
        env_seed = os.environ.get("BLACKCATT_SEED")
        if env_seed is not None:
            try:
                config = replace(config, seed=int(env_seed))
            except ValueError as exc:
                raise ConfigError(f"BLACKCATT_SEED must be an integer: {env_seed!r}") from exc
        return config

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))
        return path


def image_seed(seed: int, image_id: str) -> int:
    """Stable 64-bit per-image seed derived from the global seed."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def role_seed(seed: int, image_id: str, role: str) -> int:
    return image_seed(seed, image_id) + _ROLE_OFFSETS[role]


def build_detector(config: ExperimentConfig) -> Detector:
    if config.synthetic_scenario is not None:
        scenario = SyntheticScenario.from_json(config.synthetic_scenario)
        return SyntheticDetector(scenario, conf_threshold=config.conf_threshold)
    return HttpDetector(
        config.detector_url, conf_threshold=config.conf_threshold, model=config.model
    )


def _detector_tag(detector) -> str:
    if isinstance(detector, SyntheticDetector):
        blob = json.dumps(detector.scenario.to_dict(), sort_keys=True).encode()
        return "synthetic:" + hashlib.sha256(blob).hexdigest()[:12]
    if isinstance(detector, HttpDetector):
        return f"http:{detector.model or 'default'}"
    return type(detector).__name__


def ingest_dataset(
    dataset_dir: str | Path,
    detector: Detector,
    conf_threshold: float = 0.25,
    cache_path: str | Path | None = None,
) -> list[tuple[Image, Detection]]:
    """Keep exactly the images producing a single detection.

    Detections are cached on disk keyed by (file hash, threshold, detector
    tag); a warm rerun issues zero detector calls. Unreadable files are
    skipped with a notice. Output is ordered by image id.
    """
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {dataset_dir}")
    cache_file = Path(cache_path) if cache_path else dataset_dir / ".detections.json"
    cache: dict[str, dict] = {}
    if cache_file.exists():
        try:
            cache = json.loads(cache_file.read_text())
        except ValueError:
            log.warning("detection cache unreadable, rebuilding: %s", cache_file)

    files = sorted(
        (p for p in dataset_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")),
        key=lambda p: p.stem,
    )
    tag = _detector_tag(detector)
    kept: list[tuple[Image, Detection]] = []
    dirty = False
    for path in files:
        raw = path.read_bytes()
        try:
            image = load_png(raw, image_id=path.stem)
        except CodecError as exc:
            log.warning("skipping unreadable image %s: %s", path.name, exc)
            continue
        key = f"{hashlib.sha256(raw).hexdigest()}:{conf_threshold!r}:{tag}"
        if key in cache:
            detections = [Detection.from_wire(d) for d in cache[key]["detections"]]
        else:
            result = detector.detect(image)
            cache[key] = result.to_wire()
            detections = list(result)
            dirty = True
        if len(detections) == 1:
            kept.append((image, detections[0]))
    if dirty:
        tmp = cache_file.with_suffix(".tmp")
        tmp.write_text(json.dumps(cache, sort_keys=True))
        tmp.replace(cache_file)
    return kept


def _compute_map(
    config: ExperimentConfig,
    detector: Detector,
    image: Image,
    target: TargetSpec,
    seed: int,
) -> ResponsibilityMap:
    params = config.saliency_params
    if config.saliency_method == "drise" and target.kind == "detection":
        return drise_map(
            image,
            detector,
            target,
            n_masks=int(params.get("n_masks", 1000)),
            cells=int(params.get("cells", 8)),
            p_keep=float(params.get("p_keep", 0.5)),
            seed=seed,
        )
    # the absence target always uses the recursive-partition method
    return rex_map(
        image,
        detector,
        target,
        depth=int(params.get("depth", 4)),
        splits_per_level=int(params.get("splits_per_level", 4)),
        samples_per_level=int(params.get("samples_per_level", 20)),
        masking_value=config.masking_value,
        seed=seed,
    )


def _attack_block(
    records: dict[str, AttackRecord],
    image_id: str,
    method: str,
    output_dir: Path,
) -> dict:
    """Serialize per-goal records; achieved ones persist a PNG + replay hash."""
    block = {}
    for goal in GOAL_NAMES:
        record = records[goal]
        entry = {
            "achieved": record.achieved,
            "queries": record.queries,
            "distances": record.distances.to_dict(),
            "spec": record.spec,
            "perturbed_png": None,
            "replay_sha256": None,
        }
        if record.achieved:
            png_dir = output_dir / "perturbed"
            png_dir.mkdir(parents=True, exist_ok=True)
            name = f"{image_id}__{method}__{goal}.png"
            blob = png_bytes(record.perturbed)
            (png_dir / name).write_bytes(blob)
            entry["perturbed_png"] = f"perturbed/{name}"
            entry["replay_sha256"] = hashlib.sha256(blob).hexdigest()
        block[goal] = entry
    return block


def _run_single(
    config: ExperimentConfig,
    detector: Detector,
    image: Image,
    original: Detection,
    lpips_fn: Callable[[Image, Image], float] | None,
    output_dir: Path,
) -> dict:
    start = time.perf_counter()
    calls_before = detector.counter.calls
    image_id = image.image_id
    target = TargetSpec.for_detection(original, iou_match=config.iou_match)

    needs_maps = any(m in config.methods for m in ("bl", "mog", "single_step"))
    r_map: ResponsibilityMap | None = None
    rbar_map: ResponsibilityMap | None = None
    msps: Msps | None = None
    extraction_error: str | None = None
    if needs_maps:
        r_map = _compute_map(
            config, detector, image, target, role_seed(config.seed, image_id, "r_map")
        )
        if "bl" in config.methods:
            rbar_map = _compute_map(
                config,
                detector,
                image,
                TargetSpec.absence(),
                role_seed(config.seed, image_id, "rbar_map"),
            )
        if not r_map.degenerate:
            try:
                msps = extract_msps(
                    image,
                    r_map,
                    detector,
                    target,
                    masking_value=config.masking_value,
                    rank_chunks=config.rank_chunks,
                )
            except ExtractionError as exc:
                extraction_error = str(exc)

    record: dict = {
        "image_id": image_id,
        "seed": image_seed(config.seed, image_id),
        "original": original.to_wire(),
        "maps": {
            "r_degenerate": r_map.degenerate if r_map else None,
            "rbar_degenerate": rbar_map.degenerate if rbar_map else None,
        },
        "msps": None,
        "spatial": None,
        "attacks": {},
        "single_step": None,
    }

    usable_msps = msps is not None and not msps.degenerate
    if msps is not None:
        record["msps"] = {
            "size": msps.size,
            "degenerate": msps.degenerate,
            "sufficiency_confidence": msps.sufficiency_confidence,
        }
        if usable_msps:
            record["msps"]["fin"] = fin(msps, original.bbox)
            record["msps"]["dice"] = dice(msps, original.bbox)
            record["msps"]["overlap"] = overlap_class(msps, original.bbox)
            record["spatial"] = {
                "confidence": original.confidence,
                "fin": record["msps"]["fin"],
                "dice": record["msps"]["dice"],
                "overlap": record["msps"]["overlap"],
            }
    elif extraction_error is not None:
        record["msps"] = {"error": extraction_error}

    for method in config.methods:
        if method == "single_step":
            continue
        seed = role_seed(config.seed, image_id, method)
        if method == "bl":
            if r_map is None or rbar_map is None or not usable_msps:
                results = inapplicable_records(image, "no usable map or pixel set")
            else:
                results = attack_bl(
                    detector, image, original, config.budget, r_map, rbar_map, msps,
                    seed=seed, iou_match=config.iou_match, lpips_fn=lpips_fn,
                )
        elif method == "mog":
            if r_map is None or not usable_msps:
                results = inapplicable_records(image, "no usable map or pixel set")
            else:
                results = attack_mog(
                    detector, image, original, config.budget, r_map, msps,
                    seed=seed, iou_match=config.iou_match, lpips_fn=lpips_fn,
                )
        elif method == "noise":
            results = baseline_attack(
                "global_noise", detector, image, original, config.budget.gammas,
                seed=seed, iou_match=config.iou_match, lpips_fn=lpips_fn,
            )
        else:  # noise_targeted
            results = baseline_attack(
                "targeted_noise", detector, image, original, config.budget.gammas,
                band_width=config.band_width,
                seed=seed, iou_match=config.iou_match, lpips_fn=lpips_fn,
            )
        record["attacks"][method] = _attack_block(results, image_id, method, output_dir)

    if "single_step" in config.methods:
        steps = []
        if usable_msps:
            base = role_seed(config.seed, image_id, "single_step")
            grid = default_single_step_grid()
            for side_index, side in enumerate(("outside", "inside")):
                for spec_index, spec in enumerate(grid):
                    seeded = replace(spec, seed=base + side_index * len(grid) + spec_index)
                    result = single_step_attack(
                        image, original, msps, side, seeded, detector,
                        iou_match=config.iou_match, lpips_fn=lpips_fn,
                    )
                    steps.append(
                        {
                            "side": side,
                            "spec": seeded.to_dict(),
                            "outcome": result.outcome.value,
                            "skipped": result.skipped,
                            "changed_area": result.changed_area,
                            "queries": result.queries,
                            "distances": result.distances.to_dict(),
                        }
                    )
        record["single_step"] = steps

    record["query_total"] = detector.counter.calls - calls_before
    record["wall_time"] = time.perf_counter() - start
    return record


def _completed_ids(results_file: Path) -> set[str]:
    done: set[str] = set()
    if not results_file.exists():
        return done
    for line in results_file.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            done.add(json.loads(line)["image_id"])
        except (ValueError, KeyError):
            log.warning("malformed record line ignored during resume")
    return done


def run_experiment(config: ExperimentConfig) -> Path:
    """Process every ingested image, streaming records; resumable."""
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.save_json(output_dir / "config.json")
    results_file = output_dir / "records.jsonl"

    detector = build_detector(config)
    lpips_fn = LpipsClient(config.lpips_endpoint) if config.lpips_endpoint else None
    items = ingest_dataset(config.dataset_dir, detector, config.conf_threshold)
    log.info("ingested %d single-detection images", len(items))
    # per-record query totals must sum to the counter total, so the
    # ingestion pass (cacheable, variable cost) is excluded from it
    detector.counter.reset()

    done = _completed_ids(results_file)
    with results_file.open("a") as sink:
        for image, original in items:
            if image.image_id in done:
                continue
            record = _run_single(config, detector, image, original, lpips_fn, output_dir)
            sink.write(json.dumps(record, sort_keys=True) + "\n")
            sink.flush()
    return output_dir


def _load_records(results_dir: str | Path) -> list[dict]:
    results_file = Path(results_dir) / "records.jsonl"
    if not results_file.exists():
        return []
    records = []
    for line in results_file.read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


class _CurvePoint:
    """Adapter giving report rows the (achieved, distances) interface."""

    __slots__ = ("achieved", "distances")

    def __init__(self, entry: dict) -> None:
        self.achieved = bool(entry["achieved"])
        self.distances = MetricBundle.from_dict(entry["distances"])


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    import csv

    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def emit_report(results_dir: str | Path, thresholds: dict | None = None) -> list[Path]:
    """Success tables, curves, spatial summaries, single-step areas.

    Everything is recomputed from records.jsonl. Returns written paths;
    empty results produce only a notice.
    """
    results_dir = Path(results_dir)
    records = _load_records(results_dir)
    if not records:
        log.warning("no records found in %s: nothing to report", results_dir)
        return []
    thresholds = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    report_dir = results_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    methods = sorted({m for r in records for m in r.get("attacks", {})})
    success_rows: list[list] = []
    curve_rows: list[list] = []
    for method in methods:
        for goal in GOAL_NAMES:
            points = [
                _CurvePoint(r["attacks"][method][goal])
                for r in records
                if method in r.get("attacks", {})
            ]
            n = len(points)
            for metric, grid in sorted(thresholds.items()):
                curve = success_rate_curve(points, metric, sorted(grid))
                for threshold, pct in curve:
                    successes = round(pct * n / 100.0)
                    success_rows.append(
                        [method, goal, metric, threshold, n, successes, f"{pct:.4f}"]
                    )
                    curve_rows.append([metric, method, goal, threshold, f"{pct:.4f}"])
    written.append(
        _write_csv(
            report_dir / "success_table.csv",
            ["method", "goal", "metric", "threshold", "n", "successes", "success_pct"],
            success_rows,
        )
    )
    written.append(
        _write_csv(
            report_dir / "curves.csv",
            ["metric", "method", "goal", "threshold", "success_pct"],
            curve_rows,
        )
    )

    spatial = [
        SpatialRecord(
            image_id=r["image_id"],
            confidence=r["spatial"]["confidence"],
            fin=r["spatial"]["fin"],
            dice=r["spatial"]["dice"],
            overlap=r["spatial"]["overlap"],
        )
        for r in records
        if r.get("spatial")
    ]
    if spatial:
        bins = confidence_binned_summary(spatial)
        written.append(
            _write_csv(
                report_dir / "spatial_bins.csv",
                list(bins[0].keys()),
                [list(row.values()) for row in bins],
            )
        )
        corr_rows: list[list] = []
        if len(spatial) >= 3:
            confidences = [s.confidence for s in spatial]
            for name, series in (
                ("fin", [s.fin for s in spatial]),
                ("dice", [s.dice for s in spatial]),
            ):
                stats = rank_correlations(confidences, series)
                for stat_name, (value, p_value) in stats.items():
                    corr_rows.append(
                        [f"confidence_vs_{name}", stat_name, value, p_value]
                    )
        corr_rows.append(
            ["all", "not_fully_contained_fraction", not_fully_contained_fraction(spatial), ""]
        )
        written.append(
            _write_csv(
                report_dir / "spatial_correlations.csv",
                ["series", "statistic", "value", "p_value"],
                corr_rows,
            )
        )

    area_stats: dict[tuple[str, str, str], list[int]] = {}
    for r in records:
        for step in r.get("single_step") or []:
            if step["skipped"]:
                continue
            key = (step["spec"]["kind"], step["side"], step["outcome"])
            area_stats.setdefault(key, []).append(step["changed_area"])
    if area_stats:
        rows = [
            [kind, side, outcome, len(areas), sum(areas) / len(areas)]
            for (kind, side, outcome), areas in sorted(area_stats.items())
        ]
        written.append(
            _write_csv(
                report_dir / "single_step_areas.csv",
                ["kind", "side", "outcome", "n", "mean_changed_area"],
                rows,
            )
        )

    class_counts: dict[str, int] = {}
    for r in records:
        label = r["original"]["label"]
        class_counts[label] = class_counts.get(label, 0) + 1
    known = [label for label in COCO_CLASSES if label in class_counts]
    extra = sorted(set(class_counts) - set(known))
    written.append(
        _write_csv(
            report_dir / "class_counts.csv",
            ["label", "n"],
            [[label, class_counts[label]] for label in known + extra],
        )
    )
    return written
