import math

import numpy as np
import pytest

from sheetfield.calculus import (double_ito, double_ito_values, girsanov_mean, girsanov_weight, line_integral_t,
                                 local_time_formula_check)
from sheetfield.drift import make_drift
from sheetfield.errors import ParameterError, WeightOverflowError
from sheetfield.sheet import GridSpec, SheetPath, generate_sheet, sheet_values


def test_constant_integrand_is_the_corner_value():
    w = generate_sheet(GridSpec.square(8, 2), 4)
    v = double_ito(lambda s, t, x: np.ones_like(x), w)
    assert abs(float(v) - w.values[-1, -1].sum()) < 1e-13


def test_ito_isometry():
    g = GridSpec.square(8)
    w = sheet_values(g, range(20_000))
    v = double_ito_values(lambda s, t, x: x, g, w)
    # E (sum W dW)^2 = sum_ij s_i t_j ds dt over left corners
    exact = sum(i * j for i in range(8) for j in range(8)) / 8**4
    assert abs(v.mean()) < 4 * v.std() / math.sqrt(len(v))
    assert abs((v**2).mean() - exact) < 4 * (v**2).std() / math.sqrt(len(v))


def test_constant_drift_weight_closed_form():
    c = 0.7
    w = generate_sheet(GridSpec.square(16), 9)
    e = girsanov_weight(make_drift("constant", c=c), w)
    assert abs(e.meta["exponent"] - (c * w.values[-1, -1, 0] - 0.5 * c * c)) < 1e-13


def test_weight_on_subrectangle():
    c = 0.5
    g = GridSpec.square(16)
    w = generate_sheet(g, 1)
    e = girsanov_weight(make_drift("constant", c=c), w, S=0.5, T=0.25)
    assert abs(e.meta["exponent"] - (c * w.at(0.5, 0.25)[0] - 0.5 * c * c * 0.125)) < 1e-13


@pytest.mark.parametrize("did", ["sign", "mean_tanh"])
def test_mean_one(did):
    d = 2 if did == "mean_tanh" else 1
    e1, e2 = girsanov_mean(make_drift(did, d=d), GridSpec.square(16, d), 0, 20_000)
    assert e1.within(1.0, 4.0)
    assert e2.mean > 1.0


def test_overflow_is_reported():
    g = GridSpec.square(1)
    v = np.zeros(g.shape)
    v[1, 1, 0] = 1e4
    with pytest.raises(WeightOverflowError) as exc:
        girsanov_weight(make_drift("constant", c=1.0), SheetPath(g, v))
    assert exc.value.exponent > 709


def test_line_integral_matches_sum():
    g = GridSpec.square(4)
    w = generate_sheet(g, 3)
    v = float(line_integral_t(lambda s, t, x: np.ones(x.shape[:-1]), w))
    # sum_i ds (W_i,n - W_i,0) = ds * sum_i W(s_i, 1) over left nodes
    assert abs(v - g.ds * w.values[:-1, -1, 0].sum()) < 1e-14


def test_singular_weight_cutoff():
    w = generate_sheet(GridSpec.square(16), 0)
    with pytest.raises(ParameterError):
        line_integral_t(lambda s, t, x: x[..., 0], w, s_weight="1/s")
    v = line_integral_t(lambda s, t, x: x[..., 0], w, s_weight="1/s", s_range=(0.25, 1.0))
    assert math.isfinite(float(v))


def test_local_time_identity_linear():
    rep = local_time_formula_check(lambda s, t, x: x[..., 0], lambda s, t, x: np.ones(x.shape[:-1]),
                                   GridSpec.square(64), 0, 2000)
    assert rep.diff.within(0.0, 4.0)
    assert abs(rep.lhs_mean.mean - (1 - rep.s_min)) < 1e-12


def test_local_time_needs_unit_horizon():
    with pytest.raises(ParameterError):
        local_time_formula_check(lambda s, t, x: x[..., 0], lambda s, t, x: np.ones(x.shape[:-1]),
                                 GridSpec(16, 16, 1.0, 0.5), 0, 10)
