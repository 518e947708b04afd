import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinface.augment import (
    AFFINE_KINDS, AffineOp, AugmentConfig, apply_affine, augment_family, mixup_parents,
    sample_affine,
)
from kinface.errors import DimensionError


@pytest.fixture
def parents(rng):
    return rng.uniform(0, 255, (12, 10, 3)), rng.uniform(0, 255, (12, 10, 3))


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_mixup_endpoints(parents, alpha):
    f, m = parents
    f2, m2 = mixup_parents(f, m, alpha, alpha)
    if alpha == 1.0:
        assert np.array_equal(f2, f) and np.array_equal(m2, m)
    elif alpha == 0.0:
        assert np.array_equal(f2, m) and np.array_equal(m2, f)
    else:
        assert np.array_equal(f2, m2)
        np.testing.assert_allclose(f2, (f + m) / 2, rtol=0, atol=1e-12)


@given(alpha=st.floats(0, 1), beta=st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_mixup_stays_between_parents(alpha, beta):
    rng = np.random.default_rng(0)
    f, m = rng.uniform(0, 255, (4, 4, 3)), rng.uniform(0, 255, (4, 4, 3))
    for img in mixup_parents(f, m, alpha, beta):
        assert np.all(img >= np.minimum(f, m)) and np.all(img <= np.maximum(f, m))


def test_mixup_validates(parents):
    f, m = parents
    with pytest.raises(ValueError):
        mixup_parents(f, m, 1.2, 0.5)
    with pytest.raises(DimensionError):
        mixup_parents(f, m[:5], 0.5, 0.5)


def test_affine_kinds_uniform():
    rng = np.random.default_rng(0)
    cfg = AugmentConfig()
    counts = collections.Counter(sample_affine(rng, cfg).kind for _ in range(6000))
    assert set(counts) == set(AFFINE_KINDS)
    for kind in AFFINE_KINDS:
        assert 0.13 < counts[kind] / 6000 < 0.20


def test_affine_magnitudes_in_range():
    rng = np.random.default_rng(1)
    cfg = AugmentConfig(rotate_range_deg=15, shear_range=0.1, translate_frac=0.1)
    limits = {"rotate": 15, "shear_x": 0.1, "shear_y": 0.1, "translate_x": 0.1,
              "translate_y": 0.1, "hflip": 0}
    for _ in range(2000):
        op = sample_affine(rng, cfg)
        assert abs(op.magnitude) <= limits[op.kind]


def test_double_hflip_is_identity(parents):
    f, _ = parents
    op = AffineOp("hflip")
    assert np.array_equal(apply_affine(apply_affine(f, op), op), f)
    assert np.array_equal(apply_affine(f, op), f[:, ::-1])


@pytest.mark.parametrize("kind", [k for k in AFFINE_KINDS if k != "hflip"])
def test_zero_magnitude_is_identity(parents, kind):
    f, _ = parents
    out = apply_affine(f, AffineOp(kind, 0.0))
    assert np.array_equal(out, f) and out is not f


def test_translate_x_index_arithmetic():
    img = np.arange(10, dtype=np.float64)[None, :, None].repeat(3, axis=2).repeat(4, axis=0)
    out = apply_affine(img, AffineOp("translate_x", 0.1))
    # Content moves one pixel right; the left edge replicates.
    expected = np.concatenate([[0.0], np.arange(9.0)])
    assert np.array_equal(out[0, :, 0], expected)
    out = apply_affine(img, AffineOp("translate_x", -0.1))
    assert np.array_equal(out[0, :, 0], np.concatenate([np.arange(1.0, 10.0), [9.0]]))


def test_translate_y_integer_shift():
    img = np.arange(10, dtype=np.float64)[:, None, None].repeat(3, axis=2).repeat(4, axis=1)
    out = apply_affine(img, AffineOp("translate_y", 0.2))
    assert np.array_equal(out[:, 0, 0], np.concatenate([[0.0, 0.0], np.arange(8.0)]))


def test_rotate_preserves_constant_and_centre():
    img = np.full((9, 9, 3), 42.0)
    np.testing.assert_allclose(apply_affine(img, AffineOp("rotate", 13.0)), 42.0, atol=1e-12)
    spot = np.zeros((9, 9, 3))
    spot[4, 4] = 255
    assert apply_affine(spot, AffineOp("rotate", 90.0))[4, 4, 0] == pytest.approx(255.0)


def test_rotate_90_moves_content_counter_clockwise():
    img = np.zeros((5, 5, 3))
    img[2, 4] = 100  # right of centre
    out = apply_affine(img, AffineOp("rotate", 90.0))
    assert out[0, 2, 0] == pytest.approx(100.0)  # now above centre


def test_nearest_warp_keeps_label_values(rng):
    labels = rng.integers(0, 11, (16, 16)).astype(np.uint8)
    out = apply_affine(labels, AffineOp("rotate", 11.0), interpolation="nearest")
    assert out.dtype == np.uint8 and set(np.unique(out)) <= set(np.unique(labels))


def test_affine_output_in_range(rng):
    img = rng.uniform(0, 255, (10, 10, 3))
    for op in [AffineOp("shear_x", 0.1), AffineOp("rotate", -15), AffineOp("shear_y", -0.1)]:
        out = apply_affine(img, op)
        assert out.min() >= 0 and out.max() <= 255


def test_unknown_op():
    with pytest.raises(ValueError):
        apply_affine(np.zeros((3, 3, 3)), AffineOp("zoom", 0.1))


@pytest.mark.parametrize("seed", range(100))
def test_child_is_never_touched(seed):
    rng = np.random.default_rng(seed)
    f, m, c = (rng.uniform(0, 255, (8, 8, 3)) for _ in range(3))
    cfg = AugmentConfig(p_apply=float(rng.uniform()), mode=("none", "mixup", "augmix")[seed % 3],
                        color_jitter=bool(seed % 2), chain_length=1 + seed % 3)
    before = c.copy()
    out = augment_family(f, m, c, cfg, np.random.default_rng(seed))
    assert out.child is c
    assert np.array_equal(c, before)


def test_p_apply_zero_leaves_parents(parents):
    f, m = parents
    cfg = AugmentConfig(p_apply=0.0, mode="augmix", color_jitter=True)
    for seed in range(20):
        out = augment_family(f, m, f, cfg, np.random.default_rng(seed))
        assert out.father is f and out.mother is m
        assert out.applied == {"father": [], "mother": [], "mixup": None, "jitter": None}


def test_pinned_mixup(parents):
    f, m = parents
    cfg = AugmentConfig(p_apply=1.0, mode="mixup", mixup_weights=(1.0, 1.0))
    out = augment_family(f, m, f, cfg, np.random.default_rng(0))
    assert out.applied["mixup"] == (1.0, 1.0)
    assert np.array_equal(out.father, f) and np.array_equal(out.mother, m)


def test_augmix_records_ops(parents):
    f, m = parents
    cfg = AugmentConfig(p_apply=1.0, mode="augmix", chain_length=2)
    out = augment_family(f, m, f, cfg, np.random.default_rng(3))
    assert len(out.applied["father"]) == 2 and len(out.applied["mother"]) == 2
    again = augment_family(f, m, f, cfg, np.random.default_rng(3))
    assert np.array_equal(out.father, again.father)
    assert np.array_equal(out.mother, again.mother)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(p_apply=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(hue_range=(3, -3))
    with pytest.raises(ValueError):
        AugmentConfig(mode="cutmix")
