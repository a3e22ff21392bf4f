"""scikit-learn style wrappers around the solver and the fitted constants.

``fit`` runs the Monte Carlo fit on a block of seeds; ``transform`` and
``score`` reuse the fitted state.  Inputs are seed lists or sheet paths, not
feature matrices, so only the parameter handling of scikit-learn carries over.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .drift import make_drift, mollify
from .errors import ParameterError
from .estimates import origin_fit, pseudo_metric_fit, tail_experiment
from .sheet import GridSpec, Rect, SheetPath
from .solver import euler_sweep, solve_goursat_euler, solve_perturbation, solve_picard


def _drift(drift_id, drift_params, d, level):
    pair = make_drift(drift_id, d=d, **(drift_params or {}))
    return pair if level is None else mollify(pair, level)


class GoursatSolver(TransformerMixin, BaseEstimator):
    """Map sheet paths to solution fields.

    ``transform`` accepts a list of :class:`SheetPath` or an array of node
    values shaped ``(R, n_s + 1, n_t + 1, d)`` on the unit grid.
    """

    def __init__(self, drift_id="sign", drift_params=None, level=None, scheme="goursat_euler", xi=0.0, tol=1e-10,
                 max_iter=200):
        self.drift_id = drift_id
        self.drift_params = drift_params
        self.level = level
        self.scheme = scheme
        self.xi = xi
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        if self.scheme not in ("goursat_euler", "picard"):
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        self.d_ = None if X is None else _dimension(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "d_")
        d = _dimension(X)
        drift = _drift(self.drift_id, self.drift_params, d, self.level)
        sheets = _as_sheets(X)
        if self.scheme == "goursat_euler" and all(sh.grid == sheets[0].grid for sh in sheets):
            g = sheets[0].grid
            w = np.stack([sh.values for sh in sheets])
            return euler_sweep(drift, g, w, np.broadcast_to(np.asarray(self.xi, float), (d,)))
        solve = solve_goursat_euler if self.scheme == "goursat_euler" else \
            (lambda b, sh, xi: solve_picard(b, sh, xi, tol=self.tol, max_iter=self.max_iter))
        return np.stack([solve(drift, sh, self.xi).values for sh in sheets])


class PerturbationSolver(GoursatSolver):
    """Perturbation fields ``u`` with ``X = W + u`` solving the differenced equation."""

    def transform(self, X):
        check_is_fitted(self, "d_")
        drift = _drift(self.drift_id, self.drift_params, _dimension(X), self.level)
        return np.stack([solve_perturbation(drift, sh, self.xi, tol=self.tol, max_iter=self.max_iter).values
                         for sh in _as_sheets(X)])


def _as_sheets(X):
    if isinstance(X, SheetPath):
        return [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], SheetPath):
        return list(X)
    a = np.asarray(X, dtype=float)
    if a.ndim != 4:
        raise ParameterError("expected SheetPath objects or an array (R, n_s + 1, n_t + 1, d)")
    g = GridSpec(a.shape[1] - 1, a.shape[2] - 1, d=a.shape[3])
    return [SheetPath(g, v, -1) for v in a]


def _dimension(X):
    return _as_sheets(X)[0].grid.d


class AveragingConstant(BaseEstimator):
    """Fitted constant of the averaging-operator bound.

    ``kind='pseudo_metric'`` fits C1 over point pairs, ``kind='origin'`` fits C2
    against the origin.  ``fit`` takes the fit seeds, ``score`` the check seeds
    and returns one minus the violation fraction at ``safety``.
    """

    def __init__(self, kind="pseudo_metric", drift_id="sign", drift_params=None, d=1, levels=(3, 4, 5, 6, 7, 8),
                 grid_n=512, safety=2.0, workers=None):
        self.kind = kind
        self.drift_id = drift_id
        self.drift_params = drift_params
        self.d = d
        self.levels = levels
        self.grid_n = grid_n
        self.safety = safety
        self.workers = workers

    def _run(self, seeds):
        drift = make_drift(self.drift_id, d=self.d, **(self.drift_params or {}))
        grid = GridSpec.square(self.grid_n, self.d)
        fitter = {"pseudo_metric": pseudo_metric_fit, "origin": origin_fit}.get(self.kind)
        if fitter is None:
            raise ParameterError(f"kind must be 'pseudo_metric' or 'origin', got {self.kind!r}")
        return fitter(drift, self.levels, grid=grid, seeds=list(seeds), workers=self.workers)

    def fit(self, X, y=None):
        self.report_ = self._run(X)
        self.constant_ = self.report_.constant
        self.stability_ratio_ = self.report_.stability_ratio
        return self

    def check(self, X):
        check_is_fitted(self, "constant_")
        report = self._run(X)
        return report.violation_fraction(self.constant_, self.safety), report

    def score(self, X, y=None):
        return 1.0 - self.check(X)[0]


class TailExponent(BaseEstimator):
    """Gaussian tail exponent of the normalised averaging operator over a rectangle."""

    def __init__(self, drift_id="sign", drift_params=None, rect=(0.25, 0.75, 0.25, 0.75), x=0.0, y=0.5, grid_n=64,
                 n=100_000, min_hits=50, workers=None):
        self.drift_id = drift_id
        self.drift_params = drift_params
        self.rect = rect
        self.x = x
        self.y = y
        self.grid_n = grid_n
        self.n = n
        self.min_hits = min_hits
        self.workers = workers

    def fit(self, X=0, y=None):
        """``X`` is the first seed."""
        drift = make_drift(self.drift_id, **(self.drift_params or {}))
        self.report_ = tail_experiment(drift, Rect(*self.rect), self.x, self.y, grid=GridSpec.square(self.grid_n),
                                       seed0=int(X), n=self.n, min_hits=self.min_hits, workers=self.workers)
        self.alpha_ = self.report_.alpha
        self.r2_ = self.report_.r2
        return self

    def score(self, X=None, y=None):
        check_is_fitted(self, "r2_")
        return self.r2_
