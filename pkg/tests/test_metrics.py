import math
from dataclasses import dataclass

import httpx
import numpy as np
import pytest

from blackcatt.imagecore import Image
from blackcatt.metrics import (
    DEFAULT_THRESHOLDS,
    METRIC_NAMES,
    LpipsClient,
    LpipsUnavailable,
    MetricBundle,
    lp_distances,
    metric_bundle,
    ssim,
    success_rate_curve,
)
from blackcatt.rng import uniforms

from oracles import ssim_loop


def img(data, image_id="t"):
    return Image(data=np.asarray(data, dtype=np.float64), image_id=image_id)


def random_image(seed, h=12, w=12, c=3):
    return img(uniforms(seed, h * w * c).reshape(h, w, c))


def test_lp_identical_is_zero():
    a = random_image(11)
    out = lp_distances(a, a)
    assert out == {"l0": 0.0, "l1": 0.0, "l2": 0.0, "linf": 0.0}


def test_lp_hand_example():
    # 2x2 single channel, one element changed by 1.0
    a = img(np.zeros((2, 2, 1)))
    b_data = np.zeros((2, 2, 1))
    b_data[0, 0, 0] = 1.0
    b = img(b_data)
    out = lp_distances(a, b)
    assert out["l0"] == 0.25
    assert out["l1"] == 0.25
    assert out["l2"] == 0.5
    assert out["linf"] == 1.0


def test_lp_matches_loop_oracle():
    a = random_image(21, 6, 5)
    b = random_image(22, 6, 5)
    diff = [
        abs(float(a.data[y, x, ch]) - float(b.data[y, x, ch]))
        for y in range(6)
        for x in range(5)
        for ch in range(3)
    ]
    n = len(diff)
    out = lp_distances(a, b)
    assert out["l0"] == sum(1 for d in diff if d != 0) / n
    assert abs(out["l1"] - sum(diff) / n) < 1e-15
    assert abs(out["l2"] - math.sqrt(sum(d * d for d in diff) / n)) < 1e-15
    assert out["linf"] == max(diff)


def test_lp_shape_mismatch():
    with pytest.raises(ValueError):
        lp_distances(random_image(1, 4, 4), random_image(1, 4, 5))


def test_ssim_identical_and_constant():
    a = random_image(31)
    assert ssim(a, a) == 1.0
    flat = img(np.full((9, 9, 3), 0.5))
    assert ssim(flat, flat) == 1.0


def test_ssim_matches_loop_oracle():
    a = random_image(41, 11, 11)
    b = random_image(42, 11, 11)
    assert abs(ssim(a, b, window=7) - ssim_loop(a.data, b.data, 7)) < 1e-6
    assert abs(ssim(a, b, window=5) - ssim_loop(a.data, b.data, 5)) < 1e-6


def test_ssim_window_validation():
    a = random_image(51, 6, 6)
    with pytest.raises(ValueError):
        ssim(a, a, window=7)
    with pytest.raises(ValueError):
        ssim(a, a, window=4)


def test_bundle_validation_and_dict():
    bundle = MetricBundle(l0=0.5, l1=0.1, l2=0.2, linf=0.3, ssim=0.9)
    assert bundle.lpips is None
    assert bundle.value("l2") == 0.2
    with pytest.raises(ValueError):
        bundle.value("psnr")
    assert MetricBundle.from_dict(bundle.to_dict()) == bundle
    with pytest.raises(ValueError):
        MetricBundle(l0=1.5, l1=0, l2=0, linf=0, ssim=1)
    with pytest.raises(ValueError):
        MetricBundle(l0=0, l1=-1, l2=0, linf=0, ssim=1)


def test_metric_bundle_small_image_window_shrinks():
    a = random_image(61, 4, 4)
    b = random_image(62, 4, 4)
    bundle = metric_bundle(a, b)
    raw = ssim(a, b, window=3)
    assert bundle.ssim == pytest.approx(min(max(raw, 0.0), 1.0))
    near = img(np.clip(a.data + 0.01, 0.0, 1.0))
    assert metric_bundle(a, near).ssim == pytest.approx(ssim(a, near, window=3))


def test_lpips_client_round_trip():
    def handler(request):
        assert request.url.path == "/lpips"
        import json

        payload = json.loads(request.content)
        assert set(payload) == {"image_a_png", "image_b_png"}
        return httpx.Response(200, json={"lpips": 0.042})

    client = LpipsClient("http://lpips.test")
    client._client = httpx.Client(
        transport=httpx.MockTransport(handler), base_url="http://lpips.test"
    )
    a = random_image(71, 8, 8)
    assert client(a, a) == 0.042


def test_lpips_client_failures():
    a = random_image(72, 8, 8)

    def error_500(request):
        return httpx.Response(500, text="boom")

    client = LpipsClient("http://lpips.test")
    client._client = httpx.Client(transport=httpx.MockTransport(error_500))
    with pytest.raises(LpipsUnavailable):
        client(a, a)

    def no_field(request):
        return httpx.Response(200, json={"value": 1})

    client._client = httpx.Client(transport=httpx.MockTransport(no_field))
    with pytest.raises(LpipsUnavailable):
        client(a, a)

    def network_down(request):
        raise httpx.ConnectError("down")

    client._client = httpx.Client(transport=httpx.MockTransport(network_down))
    with pytest.raises(LpipsUnavailable):
        client(a, a)


def test_bundle_degrades_without_lpips():
    a = random_image(81)
    b = random_image(82)

    def failing(x, y):
        raise LpipsUnavailable("no endpoint")

    bundle = metric_bundle(a, b, lpips_fn=failing)
    assert bundle.lpips is None
    bundle = metric_bundle(a, b, lpips_fn=lambda x, y: 0.125)
    assert bundle.lpips == 0.125


@dataclass
class CurveRecord:
    achieved: bool
    distances: MetricBundle


def bundle_l2(value, lpips=None):
    return MetricBundle(l0=0.1, l1=0.1, l2=value, linf=0.5, ssim=0.5, lpips=lpips)


def test_success_rate_curve_counting():
    records = [
        CurveRecord(True, bundle_l2(0.01)),
        CurveRecord(True, bundle_l2(0.04)),
        CurveRecord(False, bundle_l2(0.01)),
    ]
    curve = success_rate_curve(records, "l2", [0.02, 0.05, 0.10])
    assert curve == [
        (0.02, pytest.approx(100 / 3)),
        (0.05, pytest.approx(200 / 3)),
        (0.10, pytest.approx(200 / 3)),
    ]


def test_success_rate_curve_ssim_direction():
    records = [
        CurveRecord(True, MetricBundle(l0=0, l1=0, l2=0, linf=0, ssim=0.97)),
        CurveRecord(True, MetricBundle(l0=0, l1=0, l2=0, linf=0, ssim=0.91)),
    ]
    curve = success_rate_curve(records, "ssim", [0.9, 0.95, 0.99])
    assert [pct for _, pct in curve] == [100.0, 50.0, 0.0]


def test_success_rate_curve_lpips_requires_value():
    records = [
        CurveRecord(True, bundle_l2(0.01, lpips=None)),
        CurveRecord(True, bundle_l2(0.01, lpips=0.02)),
    ]
    curve = success_rate_curve(records, "lpips", [0.05])
    assert curve == [(0.05, 50.0)]


def test_success_rate_curve_edge_cases():
    assert success_rate_curve([], "l2", [0.1]) == []
    records = [CurveRecord(False, bundle_l2(0.01))]
    assert success_rate_curve(records, "l2", [0.1]) == [(0.1, 0.0)]
    with pytest.raises(ValueError):
        success_rate_curve(records, "l2", [0.2, 0.1])
    with pytest.raises(ValueError):
        success_rate_curve(records, "psnr", [0.1])


def test_default_threshold_grids():
    assert set(DEFAULT_THRESHOLDS) == set(METRIC_NAMES)
    for metric, grid in DEFAULT_THRESHOLDS.items():
        assert list(grid) == sorted(grid), metric
        assert len(grid) >= 4
    assert 10 / 255 in DEFAULT_THRESHOLDS["l2"]
