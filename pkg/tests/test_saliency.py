import numpy as np
import pytest

from blackcatt.gateway import (
    Detection,
    DetectionSet,
    QueryCounter,
    SyntheticDetector,
    SyntheticScenario,
)
from blackcatt.imagecore import BoundingBox, Image
from blackcatt.rng import uniforms
from blackcatt.saliency import (
    ResponsibilityMap,
    TargetSpec,
    combine_maps,
    drise_map,
    match_confidence,
    occlusion_grid_mask,
    rex_map,
    target_satisfied,
    target_score,
)

from corpus import G, image_32, scenario_32
from oracles import bilinear_loop


class AlwaysTarget:
    """Stub detector returning the same detection for every image."""

    def __init__(self, detection):
        self.detection = detection
        self.counter = QueryCounter()

    def detect(self, image):
        self.counter.bump()
        return DetectionSet(detections=(self.detection,))


def region_mean(map_, box):
    return float(map_.values[box.y1 : box.y2, box.x1 : box.x2].mean())


def test_target_spec_validation():
    with pytest.raises(ValueError):
        TargetSpec(kind="detection")
    with pytest.raises(ValueError):
        TargetSpec(kind="none", label="cat")
    with pytest.raises(ValueError):
        TargetSpec(kind="wat")
    assert TargetSpec.absence().kind == "none"


def test_match_and_score():
    box = BoundingBox(0, 0, 4, 4)
    target = TargetSpec(kind="detection", label="cat", label_id=15, bbox=box)
    hit = Detection(label="cat", label_id=15, confidence=0.8, bbox=box)
    near = Detection(label="cat", label_id=15, confidence=0.9, bbox=BoundingBox(2, 0, 6, 4))
    other = Detection(label="dog", label_id=16, confidence=0.9, bbox=box)
    ds = DetectionSet(detections=(hit, near, other))
    assert match_confidence(ds, target) == 0.8  # near misses the IoU bar
    assert target_satisfied(ds, target)
    assert target_score(ds, target) == pytest.approx(max(0.8, (1 / 3) * 0.9))
    assert not target_satisfied(DetectionSet(), target)
    assert target_satisfied(DetectionSet(), TargetSpec.absence())


def test_map_normalization_and_support():
    m = ResponsibilityMap.from_raw(np.array([[0.0, 2.0], [1.0, 0.0]]))
    assert m.values.max() == 1.0
    assert m.support.sum() == 2
    assert not m.degenerate
    z = ResponsibilityMap.from_raw(np.zeros((2, 2)))
    assert z.degenerate and not z.support.any()


def test_map_payload_round_trip(tmp_path):
    raw = uniforms(21, 48).reshape(6, 8)
    m = ResponsibilityMap.from_raw(raw)
    back = ResponsibilityMap.from_payload(m.to_payload())
    assert back.values == pytest.approx(m.values, abs=1e-7)  # float32 payload
    path = m.save(tmp_path / "m.json")
    assert ResponsibilityMap.load(path).values == pytest.approx(m.values, abs=1e-7)


def test_bilinear_upsample_matches_loop():
    from blackcatt.saliency import _bilinear_upsample

    grid = uniforms(22, 16).reshape(4, 4)
    got = _bilinear_upsample(grid, 13, 9)
    want = bilinear_loop(grid, 13, 9)
    assert got == pytest.approx(want, abs=1e-12)


def test_occlusion_mask_draw_contract():
    # row-major grid draws, then the two shift draws
    mask = occlusion_grid_mask(16, 16, 4, 0.5, seed=77)
    draws = uniforms(77, 18)
    grid = (draws[:16].reshape(4, 4) < 0.5).astype(float)
    shift_y = min(int(draws[16] * 4), 3)
    shift_x = min(int(draws[17] * 4), 3)
    up = bilinear_loop(grid, 20, 20)
    want = up[shift_y : shift_y + 16, shift_x : shift_x + 16]
    assert mask == pytest.approx(want, abs=1e-12)
    assert mask.min() >= 0.0 and mask.max() <= 1.0


def test_occlusion_mask_mean_is_p_keep():
    # each pixel is a convex mix of independent Bernoulli(p) cells, so the
    # n-mask pixel average sits within 3*sqrt(p(1-p)/n) of p
    n, p = 500, 0.5
    acc = np.zeros((16, 16))
    for i in range(n):
        acc += occlusion_grid_mask(16, 16, 4, p, seed=1000 + i)
    bound = 3 * np.sqrt(p * (1 - p) / n)
    assert abs(acc[0, 0] / n - p) <= bound
    assert abs(acc.mean() / n - p) <= bound


def test_drise_rejects_bad_params(synthetic_image):
    target = TargetSpec(kind="detection", label="x", label_id=1, bbox=BoundingBox(0, 0, 2, 2))
    stub = AlwaysTarget(Detection(label="x", label_id=1, confidence=1.0, bbox=BoundingBox(0, 0, 2, 2)))
    with pytest.raises(ValueError):
        drise_map(synthetic_image, stub, target, n_masks=0)
    with pytest.raises(ValueError):
        drise_map(synthetic_image, stub, target, p_keep=1.0)
    with pytest.raises(ValueError):
        drise_map(synthetic_image, stub, TargetSpec.absence())


def test_drise_always_target_near_uniform(synthetic_image):
    box = BoundingBox(0, 0, 4, 4)
    stub = AlwaysTarget(Detection(label="x", label_id=1, confidence=1.0, bbox=box))
    target = TargetSpec(kind="detection", label="x", label_id=1, bbox=box)
    n = 400
    m = drise_map(synthetic_image, stub, target, n_masks=n, cells=4, p_keep=0.5, seed=5)
    assert stub.counter.calls == n
    # every accumulated pixel is Binomial-concentrated around n*p, so after
    # max-normalization the map stays near-uniform
    sigma = np.sqrt(n * 0.25)
    low = (n * 0.5 - 3 * sigma) / (n * 0.5 + 3 * sigma)
    assert m.values.min() >= low
    assert m.values.mean() >= low


def test_drise_synthetic_mass_on_object_and_context():
    scenario = scenario_32()
    image = image_32(0, scenario)
    detector = SyntheticDetector(scenario)
    target = TargetSpec.for_detection(detector.detect(image)[0])
    m = drise_map(image, detector, target, n_masks=2000, cells=8, p_keep=0.5, seed=9)
    far_bg = BoundingBox(0, 0, 6, 6)  # touches neither region
    assert region_mean(m, scenario.object_region) > region_mean(m, far_bg)
    assert region_mean(m, scenario.context_region) > region_mean(m, far_bg)


def test_rex_degenerate_when_masking_value_detects():
    scenario = SyntheticScenario(
        object_region=BoundingBox(1, 1, 3, 3),
        context_region=BoundingBox(4, 4, 6, 6),
        label="x",
        label_id=1,
        c_star=0.0,
        tau=1.0,
        object_floor=0.0,
    )
    image = Image(data=np.full((8, 8, 3), 0.5))
    detector = SyntheticDetector(scenario, conf_threshold=0.0)
    target = TargetSpec.for_detection(detector.detect(image)[0])
    m = rex_map(image, detector, target, seed=1)
    assert m.degenerate and not m.values.any()


def test_rex_gate_disabled_concentrates_on_object():
    scenario = scenario_32(tau=1.0)  # context gate can never fail
    image = image_32(0, scenario)
    detector = SyntheticDetector(scenario)
    target = TargetSpec.for_detection(detector.detect(image)[0])
    m = rex_map(image, detector, target, seed=3)
    far_bg = BoundingBox(0, 0, 6, 6)
    assert region_mean(m, scenario.object_region) > region_mean(m, far_bg)
    peak = np.unravel_index(np.argmax(m.values), m.values.shape)
    obj = scenario.object_region
    assert obj.y1 <= peak[0] < obj.y2 and obj.x1 <= peak[1] < obj.x2


def test_rex_tight_gate_credits_both_regions():
    scenario = scenario_32(tau=0.02)
    image = image_32(0, scenario)
    detector = SyntheticDetector(scenario)
    target = TargetSpec.for_detection(detector.detect(image)[0])
    m = rex_map(image, detector, target, seed=3)
    assert region_mean(m, scenario.object_region) > 0.0
    assert region_mean(m, scenario.context_region) > 0.0


def test_rex_absence_target_skips_probe():
    scenario = scenario_32()
    image = image_32(0, scenario)
    detector = SyntheticDetector(scenario)
    m = rex_map(image, detector, TargetSpec.absence(), seed=4)
    assert not m.degenerate
    assert m.values.max() == 1.0


def test_rex_query_budget():
    scenario = scenario_32()
    image = image_32(0, scenario)
    detector = SyntheticDetector(scenario)
    target = TargetSpec.for_detection(detector.detect(image)[0])
    detector.counter.reset()
    rex_map(image, detector, target, depth=3, samples_per_level=10, seed=5)
    assert detector.counter.calls <= 3 * 10


def test_combine_rbar_zero_is_normalized_r():
    r = ResponsibilityMap.from_raw(uniforms(30, 64).reshape(8, 8))
    zero = ResponsibilityMap(values=np.zeros((8, 8)), degenerate=True)
    combined = combine_maps(r, zero)
    assert combined.values == pytest.approx(r.values)


def test_combine_equal_maps_is_normalized_r():
    r = ResponsibilityMap.from_raw(uniforms(31, 64).reshape(8, 8))
    combined = combine_maps(r, r)
    assert combined.values == pytest.approx(r.values)


def test_combine_matches_elementwise_oracle():
    a = uniforms(32, 64).reshape(8, 8)
    b = uniforms(33, 64).reshape(8, 8)
    r = ResponsibilityMap.from_raw(a)
    rbar = ResponsibilityMap.from_raw(b)
    combined = combine_maps(r, rbar)
    raw = r.values + rbar.values
    assert combined.values == pytest.approx(raw / raw.max(), abs=1e-15)
    with pytest.raises(ValueError):
        combine_maps(r, ResponsibilityMap.from_raw(np.ones((4, 4))))
