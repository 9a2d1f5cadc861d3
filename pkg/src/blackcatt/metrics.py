"""Distortion measures between an image and its perturbed version.

All Lp values are normalized by element count N = H * W * C, so thresholds
are per-element and comparable across image sizes. L2 in particular is the
root mean square sqrt(sum(d^2) / N): the "10/255"-style thresholds used in
reports apply to that quantity. LPIPS needs a pretrained network and is
only available through a remote endpoint; bundles degrade to lpips=None
when no endpoint is reachable and ranking falls back to L2.
"""
from __future__ import annotations

import base64
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .imagecore import Image, png_bytes

__all__ = [
    "METRIC_NAMES",
    "DEFAULT_THRESHOLDS",
    "LpipsUnavailable",
    "MetricBundle",
    "lp_distances",
    "ssim",
    "LpipsClient",
    "lpips_remote",
    "metric_bundle",
    "success_rate_curve",
]

log = logging.getLogger(__name__)

METRIC_NAMES = ("l0", "l1", "l2", "linf", "lpips", "ssim")

# Threshold grids used by reports. Lp grids are in [0,1] units (the /255
# entries mirror the usual 8-bit phrasing). SSIM thresholds are "at least".
DEFAULT_THRESHOLDS: dict[str, tuple[float, ...]] = {
    "l0": (0.01, 0.05, 0.1, 0.2),
    "l1": (0.01, 0.05, 0.1, 0.2),
    "l2": (2 / 255, 4 / 255, 8 / 255, 10 / 255),
    "linf": (2 / 255, 4 / 255, 8 / 255, 10 / 255),
    "lpips": (0.005, 0.01, 0.05, 0.1, 0.2),
    "ssim": (0.9, 0.95, 0.98, 0.99),
}


class LpipsUnavailable(RuntimeError):
    """The remote perceptual-distance endpoint could not produce a value."""


@dataclass(frozen=True, slots=True)
class MetricBundle:
    l0: float
    l1: float
    l2: float
    linf: float
    ssim: float
    lpips: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.l0 <= 1.0:
            raise ValueError("l0 is a fraction in [0, 1]")
        for field in ("l1", "l2", "linf"):
            if getattr(self, field) < 0.0:
                raise ValueError(f"{field} must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricBundle":
        return cls(**{k: payload.get(k) for k in METRIC_NAMES})

    def value(self, metric: str) -> float | None:
        if metric not in METRIC_NAMES:
            raise ValueError(f"unknown metric {metric!r}")
        return getattr(self, metric)


def lp_distances(a: Image, b: Image) -> dict[str, float]:
    """l0 fraction of differing elements, l1 mean abs, l2 RMS, linf max."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    return {
        "l0": float(np.count_nonzero(diff) / n),
        "l1": float(np.abs(diff).mean()),
        "l2": float(math.sqrt(float((diff * diff).sum()) / n)),
        "linf": float(np.abs(diff).max()),
    }


def ssim(
    a: Image,
    b: Image,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Mean structural similarity over all fully valid sliding windows.

    Uniform (unweighted) window, unbiased variance/covariance, channels
    averaged. Matches the common reference implementation with gaussian
    weighting disabled.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if window > min(a.height, a.width):
        raise ValueError("window larger than image")
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and >= 3")

    x, y = a.data, b.data
    size = (window, window, 1)
    pad = window // 2
    crop = (slice(pad, -pad), slice(pad, -pad))

    def mean(arr: np.ndarray) -> np.ndarray:
        return uniform_filter(arr, size=size, mode="nearest")[crop]

    np_ = window * window
    cov_norm = np_ / (np_ - 1)
    ux, uy = mean(x), mean(y)
    uxx, uyy, uxy = mean(x * x), mean(y * y), mean(x * y)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    score = ((2 * ux * uy + c1) * (2 * vxy + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )
    return float(score.mean())


class LpipsClient:
    """Thin client for the remote perceptual-distance endpoint."""

    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.Client(timeout=timeout)

    def distance(self, a: Image, b: Image) -> float:
        import httpx

        payload = {
            "image_a_png": base64.b64encode(png_bytes(a)).decode("ascii"),
            "image_b_png": base64.b64encode(png_bytes(b)).decode("ascii"),
        }
        try:
            response = self._client.post(f"{self.endpoint}/lpips", json=payload)
        except httpx.HTTPError as exc:
            raise LpipsUnavailable(f"endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise LpipsUnavailable(f"endpoint returned {response.status_code}")
        try:
            return float(response.json()["lpips"])
        except (KeyError, TypeError, ValueError) as exc:
            raise LpipsUnavailable(f"malformed response: {exc}") from exc

    def close(self) -> None:
        self._client.close()

    def __call__(self, a: Image, b: Image) -> float:
        return self.distance(a, b)


def lpips_remote(a: Image, b: Image, endpoint: str, timeout: float = 30.0) -> float:
    client = LpipsClient(endpoint, timeout=timeout)
    try:
        return client.distance(a, b)
    finally:
        client.close()


def metric_bundle(a: Image, b: Image, lpips_fn=None, ssim_window: int = 7) -> MetricBundle:
    """Full bundle; lpips_fn failures degrade to lpips=None with a notice."""
    window = min(ssim_window, min(a.height, a.width))
    if window % 2 == 0:
        window -= 1
    lpips_value: float | None = None
    if lpips_fn is not None:
        try:
            lpips_value = float(lpips_fn(a, b))
        except LpipsUnavailable as exc:
            log.info("lpips unavailable, bundle degrades: %s", exc)
    structural = ssim(a, b, window=window)
    return MetricBundle(
        **lp_distances(a, b),
        ssim=min(max(structural, 0.0), 1.0),
        lpips=lpips_value,
    )


def success_rate_curve(records, metric: str, thresholds) -> list[tuple[float, float]]:
    """Success percentage at each threshold over ALL records.

    A record succeeds at t when it is achieved and its bundle's metric is
    <= t (>= t for ssim). Records without an lpips value never succeed on
    the lpips axis. Thresholds must be ascending; the curve is then
    monotone (nondecreasing, nonincreasing for ssim).
    """
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    thresholds = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be ascending")
    records = list(records)
    if not records:
        return []

    curve = []
    for t in thresholds:
        hits = 0
        for record in records:
            if not record.achieved:
                continue
            value = record.distances.value(metric)
            if value is None:
                continue
            if (value >= t) if metric == "ssim" else (value <= t):
                hits += 1
        curve.append((t, 100.0 * hits / len(records)))
    return curve
