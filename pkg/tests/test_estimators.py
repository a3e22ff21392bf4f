import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sheetfield.errors import ParameterError
from sheetfield.estimators import AveragingConstant, GoursatSolver, PerturbationSolver, TailExponent
from sheetfield.sheet import GridSpec, generate_sheet, sheet_values
from sheetfield.solver import solve_goursat_euler, solve_picard
from sheetfield.drift import make_drift, mollify


def test_params_round_trip_through_clone():
    est = GoursatSolver(drift_id="tanh", drift_params={"M": 0.5}, level=4, xi=0.1)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(scheme="picard")
    assert c.scheme == "picard" and est.scheme == "goursat_euler"


def test_transform_matches_solver_for_arrays_and_paths():
    g = GridSpec.square(16)
    paths = [generate_sheet(g, k) for k in range(3)]
    est = GoursatSolver(drift_id="sign", level=8, xi=0.2).fit(paths)
    out = est.transform(paths)
    ref = solve_goursat_euler(mollify(make_drift("sign"), 8), paths[1], 0.2).values
    np.testing.assert_array_equal(out[1], ref)
    np.testing.assert_array_equal(est.transform(sheet_values(g, range(3))), out)


def test_picard_scheme():
    w = generate_sheet(GridSpec.square(16), 0)
    out = GoursatSolver(drift_id="sign", level=4, scheme="picard", tol=1e-12).fit([w]).transform([w])
    ref = solve_picard(mollify(make_drift("sign"), 4), w, tol=1e-12).values
    np.testing.assert_array_equal(out[0], ref)


def test_unfitted_and_bad_scheme():
    w = generate_sheet(GridSpec.square(4), 0)
    with pytest.raises(NotFittedError):
        GoursatSolver().transform([w])
    with pytest.raises(ParameterError):
        GoursatSolver(scheme="rk4").fit([w])
    with pytest.raises(ParameterError):
        GoursatSolver().fit(np.zeros((2, 3)))


def test_perturbation_solver_zero_start():
    w = generate_sheet(GridSpec.square(8), 0)
    out = PerturbationSolver(drift_id="sign").fit([w]).transform([w])
    assert np.all(out == 0)


def test_averaging_constant_fit_check_score():
    est = AveragingConstant(kind="origin", levels=(2, 3), grid_n=32)
    est.fit(range(6))
    assert est.constant_ > 0 and est.stability_ratio_ >= 1
    frac, rep = est.check(range(6, 12))
    assert 0 <= frac <= 1 and rep.kind == "C2"
    assert est.score(range(6, 12)) == 1 - frac
    with pytest.raises(ParameterError):
        AveragingConstant(kind="other", grid_n=8).fit(range(2))


def test_tail_exponent():
    est = TailExponent(grid_n=16, n=3000, min_hits=20).fit(0)
    assert est.alpha_ > 0
    assert est.score() == est.r2_
