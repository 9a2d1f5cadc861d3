import numpy as np
import pytest

from blackcatt.gateway import Outcome, SyntheticDetector
from blackcatt.imagecore import BoundingBox, Image
from blackcatt.msps import extract_msps
from blackcatt.perturb import (
    BLUR_RADII,
    NOISE_SIGMAS,
    PERTURBATION_KINDS,
    PIXEL_DELTAS,
    SHIFT_OFFSETS,
    PerturbationSpec,
    boundary_band_mask,
    default_single_step_grid,
    perturb_region,
    single_step_attack,
)
from blackcatt.rng import normals, uniforms
from blackcatt.saliency import ResponsibilityMap, TargetSpec

from corpus import image_12, scenario_12
from oracles import band_member


def img(seed, h=8, w=8):
    return Image(data=uniforms(seed, h * w * 3).reshape(h, w, 3), image_id="t")


def full_region(h=8, w=8):
    return np.ones((h, w), dtype=bool)


def test_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec("warp", 1.0)
    with pytest.raises(ValueError):
        PerturbationSpec("noise", -1.0)
    with pytest.raises(ValueError):
        PerturbationSpec("shift", 2.0)
    with pytest.raises(ValueError):
        PerturbationSpec("shift", (1.5, 2))
    PerturbationSpec("shift", (1, -2))


def test_spec_round_trip():
    for spec in default_single_step_grid():
        assert PerturbationSpec.from_dict(spec.to_dict()) == spec
    spec = PerturbationSpec("noise", 10.0, seed=99)
    assert PerturbationSpec.from_dict(spec.to_dict()).seed == 99


def test_grid_canonical_order():
    grid = default_single_step_grid()
    kinds = [spec.kind for spec in grid]
    expected = (
        ["blur"] * len(BLUR_RADII)
        + ["noise"] * len(NOISE_SIGMAS)
        + ["shift"] * len(SHIFT_OFFSETS)
        + ["pixel_value"] * len(PIXEL_DELTAS)
    )
    assert kinds == expected
    assert len(grid) == 3 + 4 + 16 + 6
    assert set(kinds) == set(PERTURBATION_KINDS)


def test_empty_region_is_identity():
    image = img(1)
    region = np.zeros((8, 8), dtype=bool)
    for spec in (
        PerturbationSpec("blur", 2.0),
        PerturbationSpec("noise", 40.0),
        PerturbationSpec("shift", (1, 1)),
        PerturbationSpec("pixel_value", 20.0),
    ):
        out = perturb_region(image, region, spec)
        assert (out.data == image.data).all()


def test_writes_stay_inside_region():
    image = img(2)
    region = np.zeros((8, 8), dtype=bool)
    region[2:5, 3:6] = True
    for spec in default_single_step_grid():
        out = perturb_region(image, region, spec)
        untouched = ~region
        assert (out.data[untouched] == image.data[untouched]).all(), spec.kind


def test_noise_matches_rng_oracle():
    image = img(3)
    region = full_region()
    spec = PerturbationSpec("noise", 10.0, seed=77)
    out = perturb_region(image, region, spec)
    draws = normals(77, 8 * 8 * 3).reshape(8, 8, 3)
    want = np.clip(image.data + draws * (10.0 / 255.0), 0.0, 1.0)
    assert (out.data == want).all()


def test_noise_independent_of_region_shape():
    image = img(4)
    spec = PerturbationSpec("noise", 20.0, seed=5)
    full = perturb_region(image, full_region(), spec)
    region = np.zeros((8, 8), dtype=bool)
    region[0:3, 0:3] = True
    partial = perturb_region(image, region, spec)
    assert (partial.data[region] == full.data[region]).all()


def test_pixel_value_offset_and_saturation():
    image = img(5)
    region = full_region()
    up = perturb_region(image, region, PerturbationSpec("pixel_value", 255.0))
    assert (up.data == 1.0).all()
    down = perturb_region(image, region, PerturbationSpec("pixel_value", -255.0))
    assert (down.data == 0.0).all()
    small = perturb_region(image, region, PerturbationSpec("pixel_value", 10.0))
    want = np.clip(image.data + 10.0 / 255.0, 0.0, 1.0)
    assert (small.data == want).all()


def test_shift_clamps_at_edges():
    data = np.arange(16, dtype=np.float64).reshape(4, 4, 1) / 16.0
    image = Image(data=data, image_id="s")
    out = perturb_region(
        image, np.ones((4, 4), dtype=bool), PerturbationSpec("shift", (1, 0))
    )
    for y in range(4):
        for x in range(4):
            sx = max(x - 1, 0)
            assert out.data[y, x, 0] == data[y, sx, 0]


def test_blur_constant_image_unchanged():
    flat = Image(data=np.full((8, 8, 3), 0.25), image_id="f")
    out = perturb_region(flat, full_region(), PerturbationSpec("blur", 2.0))
    assert np.allclose(out.data, 0.25, atol=1e-12)


def test_band_mask_hand_example():
    # 10x10 frame, box (2,2,6,6), width 1: every box pixel is within one
    # pixel of the ring, so the band is the full 6x6 square around the box
    got = boundary_band_mask(BoundingBox(2, 2, 6, 6), 1, 10, 10)
    assert int(got.sum()) == 36
    assert got[1:7, 1:7].all()
    assert not got[0, 0] and not got[7, 7]


def test_band_mask_matches_brute_force():
    box = BoundingBox(3, 2, 8, 7)
    for width in (1, 2, 3):
        got = boundary_band_mask(box, width, 12, 12)
        for y in range(12):
            for x in range(12):
                assert got[y, x] == band_member(y, x, (3, 2, 8, 7), width)


def test_band_mask_covers_thin_box():
    got = boundary_band_mask(BoundingBox(0, 0, 2, 2), 2, 6, 6)
    assert got[0, 0]
    assert got[3, 3] and not got[4, 4]
    with pytest.raises(ValueError):
        boundary_band_mask(BoundingBox(0, 0, 2, 2), 0, 6, 6)


def attack_setup(tau=0.02):
    scenario = scenario_12(1, 1, object_floor=0.49, tau=tau)
    image = image_12(scenario)
    detector = SyntheticDetector(scenario)
    original = detector.detect(image)[0]
    target = TargetSpec.for_detection(original)
    values = np.zeros((12, 12))
    obj, ctx = scenario.object_region, scenario.context_region
    values[obj.y1 : obj.y2, obj.x1 : obj.x2] = 1.0
    values[ctx.y1 : ctx.y2, ctx.x1 : ctx.x2] = 1.0
    source = ResponsibilityMap.from_raw(values)
    msps = extract_msps(image, source, detector, target, rank_chunks=16)
    return image, detector, original, msps


def test_single_step_outside_noise_breaks_detection():
    image, detector, original, msps = attack_setup()
    result = single_step_attack(
        image, original, msps, "outside",
        PerturbationSpec("noise", 40.0, seed=3), detector,
    )
    assert result.outcome is Outcome.NO_PREDICTION
    assert result.queries == 1
    outside = msps.mask.copy()
    outside[original.bbox.y1 : original.bbox.y2, original.bbox.x1 : original.bbox.x2] = False
    assert 0 < result.changed_area <= int(outside.sum())
    assert result.distances.l2 > 0


def test_single_step_zero_strength_unchanged():
    image, detector, original, msps = attack_setup()
    result = single_step_attack(
        image, original, msps, "inside",
        PerturbationSpec("noise", 0.0), detector,
    )
    assert result.outcome is Outcome.UNCHANGED
    assert result.changed_area == 0
    assert result.distances.l2 == 0.0


def test_single_step_skips_empty_checkpoint():
    # gate disabled and object-only map: nothing outside the box remains
    scenario = scenario_12(1, 1, object_floor=0.49, tau=1.0)
    image = image_12(scenario)
    detector = SyntheticDetector(scenario)
    original = detector.detect(image)[0]
    values = np.zeros((12, 12))
    obj = scenario.object_region
    values[obj.y1 : obj.y2, obj.x1 : obj.x2] = 1.0
    msps = extract_msps(
        image, ResponsibilityMap.from_raw(values), detector,
        TargetSpec.for_detection(original), rank_chunks=16,
    )
    before = detector.counter.calls
    result = single_step_attack(
        image, original, msps, "outside",
        PerturbationSpec("noise", 40.0), detector,
    )
    assert result.skipped and result.queries == 0
    assert result.outcome is Outcome.UNCHANGED
    assert detector.counter.calls == before


def test_single_step_side_validation():
    image, detector, original, msps = attack_setup()
    with pytest.raises(ValueError):
        single_step_attack(
            image, original, msps, "above",
            PerturbationSpec("noise", 10.0), detector,
        )
