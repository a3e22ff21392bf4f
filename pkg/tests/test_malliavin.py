import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sheetfield.drift import make_drift, mollify
from sheetfield.errors import ParameterError, RegimeError
from sheetfield.malliavin import (BoundedRegime, DerivativeSamples, SmallTime, adjoint_sweep, derivative_samples,
                                  finite_difference_check, forward_sweep, holder_experiment, jacobian_cells,
                                  l2_bounds_experiment, load_malliavin, malliavin_derivative, save_malliavin,
                                  small_time_regime, sobolev_functional, sobolev_refinement, strong_convergence_diag)
from sheetfield.sheet import GridSpec, SheetPath, generate_sheet
from sheetfield.solver import solve_goursat_euler

import oracles

# fractional Sobolev integrals of I0(2 sqrt((1-r)(1-u))) over the unit square, from oracles.sobolev_linear
SOBOLEV_LINEAR = {0.25: 0.40652348737558713, 0.45: 0.6195146066770633}


def _field(did, n=32, seed=0, level=8, d=1, r=0.0, u=0.0):
    sm = mollify(make_drift(did, d=d), level)
    w = generate_sheet(GridSpec.square(n, d), seed)
    return sm, w, malliavin_derivative(sm, solve_goursat_euler(sm, w), r, u)


def test_identity_for_zero_gradient():
    _, _, f = _field("zero", d=2, r=0.25, u=0.5)
    i0, j0 = f.base
    assert np.all(f.values[i0:, j0:] == np.eye(2))
    assert np.all(f.values[:i0] == 0) and np.all(f.values[:, :j0] == 0)


def test_linear_drift_against_series():
    errs = []
    for n in (32, 64, 128):
        _, _, f = _field("affine", n=n, r=0.25, u=0.5)
        errs.append(abs(f.at(1.0, 1.0)[0, 0] - oracles.bessel_series(0.75 * 0.5)))
    assert errs[-1] <= 2.0 / 128
    assert errs[0] > errs[1] > errs[2]


def test_matches_derivative_of_the_scheme():
    # D at base node (a+1, b+1) is the derivative of X(1, 1) in the increment of cell (a, b)
    sm = mollify(make_drift("tanh_difference"), 4)
    g = GridSpec.square(16)
    w = generate_sheet(g, 3)
    x0 = solve_goursat_euler(sm, w).values[-1, -1, 0]
    f = malliavin_derivative(sm, solve_goursat_euler(sm, w), 6 / 16, 9 / 16)
    h = 1e-6
    vals = []
    for sgn in (1, -1):
        v = np.array(w.values)
        v[6:, 9:, 0] += sgn * h
        vals.append(solve_goursat_euler(sm, SheetPath(g, v)).values[-1, -1, 0])
    fd = (vals[0] - vals[1]) / (2 * h)
    assert abs(fd - f.values[-1, -1, 0, 0]) < 1e-8
    assert x0 != vals[0]


@given(seed=st.integers(0, 500), d=st.integers(1, 3), I=st.integers(1, 8), J=st.integers(1, 8))
def test_adjoint_equals_forward(seed, d, I, J):
    gen = np.random.default_rng(seed)
    A = gen.normal(0, 0.1, (8, 8, d, d))
    lam = adjoint_sweep(A, I, J)
    for a, b in ((0, 0), (I - 1, J - 1), (I // 2, J // 3)):
        ref = forward_sweep(A, a, b)[I, J]
        np.testing.assert_allclose(lam[a, b], ref, atol=1e-12)


@given(seed=st.integers(0, 500), k=st.integers(-4, 4))
def test_linear_in_the_start_matrix(seed, k):
    gen = np.random.default_rng(seed)
    A = gen.normal(0, 0.2, (6, 6, 2, 2))
    B = gen.normal(0, 1, (2, 2))
    # power-of-two scaling is exact in binary64
    np.testing.assert_array_equal(forward_sweep(A, 1, 2, 2.0**k * B), 2.0**k * forward_sweep(A, 1, 2, B))


@given(seed=st.integers(0, 10_000), level=st.sampled_from([2, 8, 32]))
def test_monotone_drift_gives_derivative_at_least_one(seed, level):
    _, _, f = _field("sign", n=16, seed=seed, level=level, r=0.25, u=0.25)
    i0, j0 = f.base
    assert np.all(f.values[i0:, j0:] >= 1.0)


@pytest.mark.parametrize("did", ["sign", "tanh_difference", "clipped_linear"])
def test_pathwise_exponential_bound(did):
    for seed in range(3):
        _, _, f = _field(did, seed=seed)
        assert f.bound_ratio <= 1.0 + 1e-12


def test_bound_for_coupled_drift():
    _, _, f = _field("mean_tanh", d=3, n=16, r=0.25, u=0.0)
    assert f.bound_ratio <= 1.0 + 1e-12


def test_finite_difference_block_reference():
    sm = mollify(make_drift("sign", d=2), 8)
    w = generate_sheet(GridSpec.square(32, 2), 1)
    rep = finite_difference_check(sm, w, None, 0.5, 0.5, delta=1e-6, eps_width=0.125, reference="block")
    assert rep.max_discrepancy < 1e-5
    pt = finite_difference_check(sm, w, None, 0.5, 0.5, delta=1e-6, eps_width=0.125)
    assert pt.max_discrepancy < 0.5


def test_finite_difference_block_must_fit():
    sm = mollify(make_drift("sign"), 8)
    w = generate_sheet(GridSpec.square(16), 1)
    with pytest.raises(ParameterError):
        finite_difference_check(sm, w, None, 0.0, 0.5, eps_width=0.25)


def test_field_round_trip(tmp_path):
    _, _, f = _field("mean_tanh", d=2, n=8, r=0.25, u=0.5)
    save_malliavin(tmp_path / "d.bin", f)
    back = load_malliavin(tmp_path / "d.bin")
    np.testing.assert_array_equal(back.values, f.values)
    np.testing.assert_array_equal(back.log_bound, f.log_bound)
    assert back.base == f.base and isinstance(back.regime, BoundedRegime)


def test_rejects_unsmoothed_and_mismatched_grids():
    w = generate_sheet(GridSpec.square(8), 0)
    sign = make_drift("sign")
    x = solve_goursat_euler(sign, w)
    with pytest.raises(ParameterError):
        malliavin_derivative(sign, x, 0, 0)
    with pytest.raises(ParameterError):
        malliavin_derivative(mollify(sign, 2), x, 0, 0, sheet=generate_sheet(GridSpec.square(4), 0))
    with pytest.raises(ParameterError):
        malliavin_derivative(mollify(sign, 2), x, 0.1, 0)


def test_jacobian_cells_rate_is_nonnegative():
    sm = mollify(make_drift("tanh_difference", d=2), 4)
    w = generate_sheet(GridSpec.square(8, 2), 0)
    A, c = jacobian_cells(sm, w.grid, solve_goursat_euler(sm, w).values)
    assert A.shape == (8, 8, 2, 2) and np.all(c >= 0)


# ---------------------------------------------------------------- Sobolev functional

@pytest.mark.parametrize("beta", [0.25, 0.45])
def test_sobolev_against_polar_quadrature(beta):
    lin = mollify(make_drift("affine", slope=1.0), 4)
    smp = derivative_samples(lin, (1.0, 1.0), K=64, grid=GridSpec.square(128), n=1)
    got = sobolev_functional(smp, beta).value
    assert abs(got - SOBOLEV_LINEAR[beta]) < 0.01 * SOBOLEV_LINEAR[beta]


def test_frozen_sobolev_oracle():
    assert abs(oracles.sobolev_linear(0.25) - SOBOLEV_LINEAR[0.25]) < 1e-12


def _samples(values, K=4):
    return DerivativeSamples(GridSpec.square(K), (1.0, 1.0), K, values, 1, tuple(range(len(values))))


def test_sobolev_vanishes_for_constant_field():
    v = np.full((3, 4, 4, 2, 2), 1.7)
    # the expanded quadratic form cancels to round-off, not to an exact zero
    assert sobolev_functional(_samples(v), 0.3).value < 1e-10


@given(seed=st.integers(0, 1000), k=st.integers(-3, 3), beta=st.floats(0.05, 0.95))
def test_sobolev_is_quadratic(seed, k, beta):
    v = np.random.default_rng(seed).normal(size=(2, 4, 4, 1, 1))
    a = sobolev_functional(_samples(v), beta).value
    b = sobolev_functional(_samples(2.0**k * v), beta).value
    assert math.isclose(b, 4.0**k * a, rel_tol=1e-12)


def test_sobolev_beta_range():
    v = np.zeros((1, 4, 4, 1, 1))
    for beta in (0.0, 1.0, -0.2):
        with pytest.raises(ParameterError):
            sobolev_functional(_samples(v), beta)


def test_coarsen_and_refinement():
    v = np.random.default_rng(0).normal(size=(2, 8, 8, 1, 1))
    smp = _samples(v, K=8)
    c = smp.coarsen(2)
    assert c.values.shape == (2, 2, 2, 1, 1)
    np.testing.assert_allclose(c.values[:, 0, 0], v[:, :4, :4].mean(axis=(1, 2)))
    with pytest.raises(ParameterError):
        smp.coarsen(3)
    with pytest.raises(ParameterError):
        sobolev_refinement(smp, 0.3, Ks=(4, 8))


def test_refinement_separates_beta():
    sm = mollify(make_drift("sign"), 8)
    smp = derivative_samples(sm, (0.5, 0.5), K=32, grid=GridSpec.square(64), n=16)
    low = sobolev_refinement(smp, 0.25)
    high = sobolev_refinement(smp, 0.75)
    assert high.growth_exponent > low.growth_exponent
    assert high.diverging


# ---------------------------------------------------------------- ensembles and regimes

def test_small_time_regime_values():
    assert small_time_regime(make_drift("sign")).tau1 == 1.0
    reg = small_time_regime(make_drift("affine"), n=400)
    assert reg.tau == 1.0 / 8192 and reg.zeta == 1.0 / 256
    with pytest.raises(RegimeError) as exc:
        reg.check(0.5, 0.5)
    assert exc.value.details["tau"] == reg.tau


def test_l2_gate_for_linear_growth():
    with pytest.raises(RegimeError):
        l2_bounds_experiment(make_drift("affine"), (2, 4), grid=GridSpec.square(8), n=10)
    reg = SmallTime(tau=0.25)
    rep = l2_bounds_experiment(make_drift("affine"), (2, 4), points=((0.25, 0.25),), grid=GridSpec.square(8), n=50,
                               regime=reg)
    assert rep.x_sq[(0.25, 0.25)][2].mean > 0


def test_l2_bounded_drift():
    rep = l2_bounds_experiment(make_drift("sign"), (2, 4), grid=GridSpec.square(16), n=200)
    row = rep.table()[0]
    assert row["supE|D|^2"] >= 1.0
    assert (row["base_r"], row["base_u"]) == (0.0, 0.0)


def test_holder_zero_gradient_is_trivially_fine():
    rep = holder_experiment(mollify(make_drift("zero"), 4), grid=GridSpec.square(16), n=10)
    assert math.isnan(rep.slope) and rep.ok


def test_holder_slope_for_linear_drift():
    rep = holder_experiment(mollify(make_drift("affine"), 4), grid=GridSpec.square(32), n=2)
    assert rep.slope > 1.5 and rep.ok


def test_strong_convergence_small():
    rep = strong_convergence_diag(make_drift("sign"), (2, 8, 32), grid=GridSpec.square(32), n=200)
    assert rep.decreasing
    assert len(rep.table()) == 2
