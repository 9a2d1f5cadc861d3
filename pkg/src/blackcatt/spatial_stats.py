"""Rank correlations and confidence-binned summaries of spatial metrics.

The correlation cores are computed here rather than taken from scipy:
a perfectly monotone pair must report exactly +/-1, and scipy's float
pipeline can land an ulp short. The boundary is decided in exact rational
(or integer) arithmetic, everything else in floats. P-values follow fixed
approximations regardless of scipy version: t-approximation for Spearman
and Pearson, normal approximation for Kendall (tie-uncorrected variance).
Exact permutation tests are out of scope at the intended sample sizes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats as _stats

__all__ = [
    "OVERLAP_CLASSES",
    "COARSE_BINS",
    "DECADE_BINS",
    "SpatialRecord",
    "rank_correlations",
    "confidence_binned_summary",
    "not_fully_contained_fraction",
    "records_to_csv",
    "records_from_csv",
]

OVERLAP_CLASSES = ("no_overlap", "partial_overlap", "full_overlap")

# Two binning conventions seen in detector evaluations; both cover [0, 1].
COARSE_BINS = (0.0, 0.25, 0.40, 0.55, 0.70, 0.85, 1.0)
DECADE_BINS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True, slots=True)
class SpatialRecord:
    image_id: str
    confidence: float
    fin: float
    dice: float
    overlap: str

    def __post_init__(self) -> None:
        for field in ("confidence", "fin", "dice"):
            value = getattr(self, field)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{field} outside [0, 1]: {value}")
        if self.overlap not in OVERLAP_CLASSES:
            raise ValueError(f"unknown overlap class {self.overlap!r}")


def _t_pvalue(stat: float, n: int) -> float:
    if abs(stat) >= 1.0:
        return 0.0
    t = abs(stat) * math.sqrt((n - 2) / (1.0 - stat * stat))
    return float(2.0 * _stats.t.sf(t, df=n - 2))


def _kendall_pvalue(tau: float, n: int) -> float:
    z = 3.0 * abs(tau) * math.sqrt(n * (n - 1)) / math.sqrt(2.0 * (2 * n + 5))
    return float(2.0 * _stats.norm.sf(z))


def _pearson_core(xs: np.ndarray, ys: np.ndarray) -> float:
    """Pearson r with the |r| = 1 boundary decided in exact rationals."""
    n = xs.size
    fx = [Fraction(float(v)) for v in xs]
    fy = [Fraction(float(v)) for v in ys]
    mx = sum(fx) / n
    my = sum(fy) / n
    cx = [v - mx for v in fx]
    cy = [v - my for v in fy]
    cov = sum(a * b for a, b in zip(cx, cy))
    vx = sum(a * a for a in cx)
    vy = sum(b * b for b in cy)
    if cov * cov == vx * vy:  # Cauchy-Schwarz equality: exactly collinear
        return -1.0 if cov < 0 else 1.0
    return float(cov) / math.sqrt(float(vx)) / math.sqrt(float(vy))


def _kendall_core(xs: np.ndarray, ys: np.ndarray) -> float:
    """Kendall tau-b from integer pair counts."""
    n = xs.size
    iu = np.triu_indices(n, 1)
    sx = np.sign(np.subtract.outer(xs, xs))[iu].astype(np.int64)
    sy = np.sign(np.subtract.outer(ys, ys))[iu].astype(np.int64)
    s = int((sx * sy).sum())  # concordant minus discordant
    n0 = n * (n - 1) // 2
    tie_x = int((sx == 0).sum())
    tie_y = int((sy == 0).sum())
    denom_sq = (n0 - tie_x) * (n0 - tie_y)
    if s * s == denom_sq:
        return -1.0 if s < 0 else 1.0
    return s / math.sqrt(denom_sq)


def rank_correlations(xs, ys) -> dict[str, tuple[float, float]]:
    """Spearman rho, Kendall tau-b, Pearson r, each with a two-sided p.

    A constant series leaves every correlation undefined; all entries are
    then (nan, nan). A perfectly monotone pair reports rho and tau of
    exactly +/-1.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("series must be 1-D and equal length")
    n = xs.size
    if n < 3:
        raise ValueError("need at least 3 points")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        nan = (float("nan"), float("nan"))
        return {"spearman": nan, "kendall": nan, "pearson": nan}

    rho = _pearson_core(_stats.rankdata(xs), _stats.rankdata(ys))
    tau = _kendall_core(xs, ys)
    r = _pearson_core(xs, ys)
    return {
        "spearman": (rho, _t_pvalue(rho, n)),
        "kendall": (tau, _kendall_pvalue(tau, n)),
        "pearson": (r, _t_pvalue(r, n)),
    }


def _bin_index(value: float, edges: tuple[float, ...]) -> int:
    if value >= edges[-1]:
        return len(edges) - 2
    idx = int(np.searchsorted(np.asarray(edges), value, side="right")) - 1
    return max(idx, 0)


def confidence_binned_summary(
    records: list[SpatialRecord],
    bin_edges: tuple[float, ...] = COARSE_BINS,
) -> list[dict]:
    """Per-bin sample means/sds plus global overlap-class percentages.

    Bins are left-closed right-open with the last bin closed. Overlap
    percentages are of the total record count, so the whole table's
    percentage cells sum to 100. Bins with a single record report sd 0;
    empty bins report 0 for every statistic.
    """
    edges = tuple(float(e) for e in bin_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    if edges[0] > 0.0 or edges[-1] < 1.0:
        raise ValueError("bin edges must cover [0, 1]")
    for rec in records:
        if not 0.0 <= rec.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {rec.confidence}")

    total = len(records)
    grouped: list[list[SpatialRecord]] = [[] for _ in range(len(edges) - 1)]
    for rec in records:
        grouped[_bin_index(rec.confidence, edges)].append(rec)

    def sd(values: list[float]) -> float:
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    table = []
    for i, group in enumerate(grouped):
        n = len(group)
        confs = [r.confidence for r in group]
        fins = [r.fin for r in group]
        dices = [r.dice for r in group]
        row = {
            "bin_low": edges[i],
            "bin_high": edges[i + 1],
            "n": n,
            "mean_conf": float(np.mean(confs)) if n else 0.0,
            "mean_fin": float(np.mean(fins)) if n else 0.0,
            "sd_fin": sd(fins),
            "mean_dice": float(np.mean(dices)) if n else 0.0,
            "sd_dice": sd(dices),
        }
        for cls in OVERLAP_CLASSES:
            count = sum(1 for r in group if r.overlap == cls)
            row[f"pct_{cls}"] = 100.0 * count / total if total else 0.0
        table.append(row)
    return table


def not_fully_contained_fraction(records: list[SpatialRecord]) -> float:
    """Share of records whose set is not fully inside its box."""
    if not records:
        return float("nan")
    return sum(1 for r in records if r.overlap != "full_overlap") / len(records)


_CSV_FIELDS = ("image_id", "confidence", "fin", "dice", "overlap")


def records_to_csv(records: list[SpatialRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            writer.writerow(asdict(rec))
    return path


def records_from_csv(path: str | Path) -> list[SpatialRecord]:
    with Path(path).open(newline="") as handle:
        return [
            SpatialRecord(
                image_id=row["image_id"],
                confidence=float(row["confidence"]),
                fin=float(row["fin"]),
                dice=float(row["dice"]),
                overlap=row["overlap"],
            )
            for row in csv.DictReader(handle)
        ]
