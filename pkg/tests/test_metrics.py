import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bbm.errors import ConstantColumn
from bbm.io import Template
from bbm.metrics import dice, dice_matrix, overlap_matrix, reliability, threshold_zmap
from scipy.stats import norm


def test_standard_normal_tail_fraction():
    x = np.random.default_rng(0).standard_normal((1, 100_000))
    frac = threshold_zmap(x, 2.0).mean()
    assert 2 * norm.sf(2) == pytest.approx(0.0455, abs=5e-5)
    assert frac == pytest.approx(2 * norm.sf(2), abs=0.004)


@given(st.floats(-100, 100).filter(lambda a: abs(a) > 1e-3), st.floats(-1e3, 1e3), st.integers(0, 10_000))
def test_affine_invariance(a, b, seed):
    x = np.random.default_rng(seed).standard_normal((2, 200))
    # keep away from the threshold so rounding cannot flip a location
    z = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, ddof=1, keepdims=True)
    x = np.where(np.abs(np.abs(z) - 1.5) < 1e-6, x + 1e-3, x)
    np.testing.assert_array_equal(threshold_zmap(x, 1.5), threshold_zmap(a * x + b, 1.5))


def test_zero_threshold_flags_everything():
    assert threshold_zmap(np.random.default_rng(1).standard_normal((3, 50)), 0).all()


def test_constant_map():
    with pytest.raises(ConstantColumn):
        threshold_zmap(np.ones((1, 5)), 1.0)


def test_dice_examples():
    a = np.array([1, 1, 0, 0], bool)
    assert dice(a, a) == 1.0
    assert dice(a, ~a) == 0.0
    assert dice(a, np.array([1, 0, 1, 0], bool)) == 0.5


@given(arrays(bool, 30), arrays(bool, 30))
def test_dice_symmetric_and_bounded(a, b):
    assert dice(a, b) == dice(b, a)
    assert 0 <= dice(a, b) <= 1
    if a.any():
        assert dice(a, a) == 1.0


@given(arrays(bool, (4, 25)))
def test_dice_matrix_matches_pairwise(m):
    D = dice_matrix(m)
    for i in range(4):
        for j in range(4):
            assert D[i, j] == pytest.approx(dice(m[i], m[j]))


def test_parcellation_self_overlap_is_identity():
    labels = np.random.default_rng(2).integers(1, 6, 400)
    ov = overlap_matrix(Template("parcellation", labels=labels))
    np.testing.assert_array_equal(ov.dice, np.eye(5))


def test_reliability_limits(rng):
    x = rng.standard_normal((3, 100))
    np.testing.assert_allclose(reliability(x, x), 1.0)
    np.testing.assert_allclose(reliability(x, -x), -1.0)
    np.testing.assert_allclose(reliability(x, 3 * x + 7), 1.0)


def test_reliability_attenuation():
    rng = np.random.default_rng(3)
    sx, se = 1.0, 2.0
    x = sx * rng.standard_normal((1, 10_000))
    y = x + se * rng.standard_normal((1, 10_000))
    assert reliability(x, y)[0] == pytest.approx(sx / np.sqrt(sx**2 + se**2), abs=0.02)
