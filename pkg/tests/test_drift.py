import numpy as np
import pytest
from hypothesis import given, strategies as st

from sheetfield.drift import (BOUNDED_IDS, Bounded, LinearGrowth, MonotonePair, bump_cdf, bump_mass, catalog,
                              gradient, make_drift, mollify, validate)
from sheetfield.errors import ParameterError

import oracles

ALL_IDS = sorted(catalog())


@pytest.mark.parametrize("did", ALL_IDS)
def test_catalog_halves_are_monotone(did):
    pair = make_drift(did, d=2)
    rep = validate(pair, sample_count=2000)
    if did == "cubic":
        assert rep.growth_violations > 0 and rep.monotone_violations == 0
    else:
        assert rep.ok, rep.witnesses


@pytest.mark.parametrize("did", ALL_IDS)
def test_mollified_halves_stay_monotone(did):
    sm = mollify(make_drift(did, d=2), 4)
    x = np.linspace(-3, 3, 301)
    pts = np.stack([x, 0.3 * x], axis=-1)
    for f in (sm.hat, sm.check):
        v = f(0.5, 0.5, pts)
        assert np.all(np.diff(v, axis=0) >= -1e-12)


def test_sign_at_zero_is_zero():
    b = make_drift("sign", M=2.0)
    np.testing.assert_array_equal(b(0, 0, np.array([[-1.0], [0.0], [3.0]]))[:, 0], [-2.0, 0.0, 2.0])


def test_bump_cdf_against_quadrature():
    for u in (-0.9, -0.3, 0.0, 0.17, 0.6, 0.99):
        assert abs(float(bump_cdf(u)) - oracles.bump_cdf_quad(u)) < 1e-10
    assert bump_cdf(0.0) == 0.5
    assert abs(bump_mass() - 0.44399381616807943) < 1e-12


def test_mollified_sign_against_quadrature():
    sm = mollify(make_drift("sign"), 8)
    for x in (-0.2, -0.05, 0.0, 0.03, 0.1, 0.5):
        assert abs(float(sm(0, 0, np.array([x]))[0]) - oracles.mollified_sign_quad(x, 8)) < 1e-10


@given(x=st.floats(-2, 2), n=st.integers(1, 64))
def test_mollified_sign_is_odd_and_bounded(x, n):
    sm = mollify(make_drift("sign"), n)
    a = sm(0, 0, np.array([x]))[0]
    b = sm(0, 0, np.array([-x]))[0]
    assert a == -b
    assert abs(a) <= 1.0


def test_affine_is_left_unchanged():
    b = make_drift("affine", slope=2.0, intercept=0.5)
    sm = mollify(b, 3)
    x = np.linspace(-1, 1, 7)[:, None]
    np.testing.assert_array_equal(sm(0, 0, x), b(0, 0, x))


def test_jacobian_matches_finite_differences():
    for did in ("tanh_difference", "sign", "mean_tanh"):
        sm = mollify(make_drift(did, d=3), 5)
        x = np.array([0.1, -0.2, 0.35])
        jac = sm.gradient(0.2, 0.3, x)[0]
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            col = (sm(0.2, 0.3, x + e) - sm(0.2, 0.3, x - e)) / (2 * h)
            np.testing.assert_allclose(jac[:, k], col, atol=1e-6)


def test_mean_tanh_couples_components():
    sm = mollify(make_drift("mean_tanh", d=2), 4)
    jac = sm.gradient(0, 0, np.array([0.2, -0.1]))[0]
    assert jac[0, 1] > 0 and jac[1, 0] > 0


def test_gradient_needs_smoothing():
    with pytest.raises(ParameterError):
        gradient(make_drift("sign"), 0, 0, np.zeros(1))
    with pytest.raises(ParameterError):
        mollify(mollify(make_drift("sign"), 2), 2)


def test_unknown_drift_and_bad_params():
    with pytest.raises(ParameterError):
        make_drift("nope")
    with pytest.raises(ParameterError):
        make_drift("affine", slope=-1.0)


def test_bounded_ids_are_bounded():
    for did in BOUNDED_IDS:
        assert isinstance(make_drift(did).growth, Bounded)
    assert isinstance(make_drift("affine").growth, LinearGrowth)


def test_black_box_pair_smooths_by_quadrature():
    pair = MonotonePair(lambda s, t, x: np.tanh(x), lambda s, t, x: np.zeros_like(x), Bounded(1.0), "bb", 1)
    ref = mollify(make_drift("tanh"), 6)
    sm = mollify(pair, 6)
    x = np.linspace(-1, 1, 9)[:, None]
    np.testing.assert_allclose(sm(0, 0, x), ref(0, 0, x), atol=1e-10)
