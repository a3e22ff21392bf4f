"""Two-parameter stochastic integrals, stochastic exponentials and the local-time identity check."""
from dataclasses import dataclass, field

import numpy as np

from ._validation import SNAP_TOL
from .errors import ParameterError, WeightOverflowError
from .parallel import estimate, map_stack
from .sheet import cell_increments_of, reverse_bridge, sheet_values
from .solver import corner_mean

EXP_LIMIT = 709.78


@dataclass(frozen=True)
class IntegralResult:
    value: float
    grid: object
    seed: int
    meta: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def _vector_integrand(f, s, t, x):
    v = np.asarray(f(s, t, x), dtype=float)
    return np.broadcast_to(v, x.shape) if v.shape != x.shape else v


def double_ito_values(f, grid, w, rule="left"):
    """``sum f(s_i, t_j, W_ij) . dW_ij`` over all cells; batch axes allowed in ``w``."""
    inc = cell_increments_of(w)
    off = 1 if rule == "right" else 0
    s = grid.s_nodes[off:grid.n_s + off, None]
    t = grid.t_nodes[None, off:grid.n_t + off]
    x = w[..., off:grid.n_s + off, off:grid.n_t + off, :]
    fx = _vector_integrand(f, s, t, x)
    if not np.all(np.isfinite(fx)):
        raise ParameterError("integrand is not finite on the grid")
    return (fx * inc).sum(axis=(-3, -2, -1))


def double_ito(f, sheet, rule="left"):
    """Adapted (left-corner) double stochastic integral of ``f(s, t, W)``."""
    if rule not in ("left", "right"):
        raise ParameterError("rule must be 'left' or 'right'")
    v = double_ito_values(f, sheet.grid, sheet.values, rule)
    return IntegralResult(float(v), sheet.grid, sheet.seed, {"rule": rule})


_WEIGHTS = {
    "none": lambda s: np.ones_like(s),
    "1/s": lambda s: 1.0 / s,
    "1/sqrt(s)": lambda s: 1.0 / np.sqrt(s),
}


def _index_range(lo, hi, step, count, name):
    a, b = lo / step, hi / step
    ia, ib = int(round(a)), int(round(b))
    if abs(a - ia) > SNAP_TOL * max(1, a) or abs(b - ib) > SNAP_TOL * max(1, b) or not 0 <= ia <= ib <= count:
        raise ParameterError(f"{name} range ({lo}, {hi}) is not node aligned")
    return ia, ib


def line_integral_values(f, grid, w, s_weight="none", s_range=None, t_range=None, component=0, s_min=None):
    if s_weight not in _WEIGHTS:
        raise ParameterError(f"s_weight must be one of {sorted(_WEIGHTS)}")
    s_lo, s_hi = s_range if s_range is not None else (0.0, grid.s_max)
    t_lo, t_hi = t_range if t_range is not None else (0.0, grid.t_max)
    i0, i1 = _index_range(s_lo, s_hi, grid.ds, grid.n_s, "s")
    j0, j1 = _index_range(t_lo, t_hi, grid.dt, grid.n_t, "t")
    if s_weight != "none":
        floor = 4 * grid.ds if s_min is None else s_min
        if i0 * grid.ds < floor - SNAP_TOL * grid.ds:
            raise ParameterError(f"singular weight {s_weight} needs s >= {floor}")
    s = grid.s_nodes[i0:i1]
    t = grid.t_nodes[j0:j1]
    x = w[..., i0:i1, j0:j1, :]
    fx = np.asarray(f(s[:, None], t[None, :], x), dtype=float) + np.zeros(x.shape[:-1])
    dw = w[..., i0:i1, j0 + 1:j1 + 1, component] - w[..., i0:i1, j0:j1, component]
    inner = (fx * dw).sum(axis=-1)
    return (inner * grid.ds * _WEIGHTS[s_weight](s)).sum(axis=-1)


def line_integral_t(f, sheet, s_weight="none", s_range=None, t_range=None, component=0, s_min=None):
    """``sum_i ds w(s_i) sum_j f(s_i, t_j, W_ij) (W_i,j+1 - W_ij)`` for one component.

    ``f`` returns a scalar per node.
    """
    v = line_integral_values(f, sheet.grid, sheet.values, s_weight, s_range, t_range, component, s_min)
    return IntegralResult(float(v), sheet.grid, sheet.seed, {"s_weight": s_weight})


def girsanov_log_values(drift, grid, w, i_hi=None, j_hi=None, compensator="left"):
    """Exponent ``sum b . dW - 1/2 sum |b|^2 ds dt`` over ``[0, S] x [0, T]``."""
    i_hi = grid.n_s if i_hi is None else i_hi
    j_hi = grid.n_t if j_hi is None else j_hi
    sub = w[..., :i_hi + 1, :j_hi + 1, :]
    inc = cell_increments_of(sub)
    s = grid.s_nodes[:i_hi, None]
    t = grid.t_nodes[None, :j_hi]
    b = drift(s, t, sub[..., :-1, :-1, :])
    stoch = (b * inc).sum(axis=(-3, -2, -1))
    if compensator == "left":
        bc = b
    elif compensator == "midpoint":
        bc = drift(s + 0.5 * grid.ds, t + 0.5 * grid.dt, corner_mean(sub))
    else:
        raise ParameterError("compensator must be 'left' or 'midpoint'")
    return stoch - 0.5 * (bc * bc).sum(axis=(-3, -2, -1)) * grid.cell_area


def girsanov_weight(drift, sheet, S=None, T=None, compensator="left"):
    """Stochastic exponential of the drift along the sheet.

    The default ``left`` compensator uses the same lower-left evaluation points
    as the stochastic integral, which makes the discrete weight an exact
    mean-one martingale; ``midpoint`` evaluates |b|^2 at cell centres.
    """
    g = sheet.grid
    i_hi = g.n_s if S is None else g.s_index(S)
    j_hi = g.n_t if T is None else g.t_index(T)
    expo = float(girsanov_log_values(drift, g, sheet.values, i_hi, j_hi, compensator))
    if expo > EXP_LIMIT:
        raise WeightOverflowError(f"exponent {expo:.6g} overflows binary64", expo)
    return IntegralResult(float(np.exp(expo)), g, sheet.seed, {"exponent": expo, "compensator": compensator})


# ---------------------------------------------------------------- ensembles

def _seed_list(seed0, n):
    return [seed0 + k for k in range(n)]


def mc_map(func, grid, seed0, n, chunk=64, workers=None):
    """Per-path statistics ``func(w_batch)`` over seeds ``seed0 .. seed0+n-1``."""
    return map_stack(lambda seeds: func(sheet_values(grid, seeds)), _seed_list(seed0, n), chunk, workers)


def girsanov_mean(drift, grid, seed0, n, compensator="left", workers=None):
    logs = mc_map(lambda w: girsanov_log_values(drift, grid, w, compensator=compensator), grid, seed0, n,
                  workers=workers)
    if np.any(logs > EXP_LIMIT):
        raise WeightOverflowError("weight overflow in ensemble", float(logs.max()))
    e = np.exp(logs)
    return estimate(e, seed0), estimate(e * e, seed0)


# ---------------------------------------------------------------- local-time identity

@dataclass
class LocalTimeReport:
    lhs: np.ndarray
    rhs: np.ndarray
    diff: object
    lhs_mean: object
    s_min: float
    S: float
    T: float
    component: int
    grid: object
    seed0: int


def _trapezoid(m, step):
    w = np.full(m, step)
    if m == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * step
    return w


def local_time_values(f, df, grid, w, component, i0, i1, J):
    """Per-path (lhs, rhs) of the local-time integration identity.

    s runs over nodes ``i0..i1`` (trapezoid weights), t over ``[0, J*dt]``.
    The reversed-time terms use the sheet hidden in the time reversal; their
    last cell, where 1/(1-u) blows up, is handled by a left-point rule.
    """
    n_t = grid.n_t
    dt = grid.dt
    s = grid.s_nodes[i0:i1 + 1]
    x = w[..., i0:i1 + 1, :, :]
    ss, tt = s[:, None], grid.t_nodes[None, :]
    F = np.asarray(f(ss, tt, x), dtype=float) + np.zeros(x.shape[:-1])
    dF = np.asarray(df(ss, tt, x[..., :J + 1, :]), dtype=float) + np.zeros(x.shape[:-2] + (J + 1,))
    ws = _trapezoid(len(s), grid.ds)
    wt = _trapezoid(J + 1, dt)
    lhs = (dF * wt).sum(axis=-1) @ ws

    wc = x[..., component]
    term1 = (F[..., :J] * np.diff(wc[..., :J + 1], axis=-1)).sum(axis=-1)

    bridge = reverse_bridge(wc, dt)
    k = np.arange(n_t - J, n_t)
    Fk = F[..., n_t - k]
    Vk = wc[..., n_t - k]
    term2 = (Fk[..., :-1] * np.diff(bridge[..., k], axis=-1)).sum(axis=-1)
    g = Fk * Vk / (1.0 - k * dt)
    term3 = 0.5 * (g[..., 1:] + g[..., :-1]).sum(axis=-1) * dt + g[..., -1] * dt

    rhs = ((-term1 - term2 + term3) / s) @ ws
    return lhs, rhs


def local_time_formula_check(f, df, grid, seed0, n, component=0, S=None, T=None, s_min=None, workers=None):
    """Monte-Carlo check of the local-time integration identity for ``f``.

    ``df`` is the partial derivative of ``f`` in the chosen component.
    """
    if abs(grid.t_max - 1.0) > SNAP_TOL:
        raise ParameterError("the identity uses time reversal about t = 1; need t_max = 1")
    S = grid.s_max if S is None else S
    T = grid.t_max if T is None else T
    s_min = 4 * grid.ds if s_min is None else s_min
    if s_min < 4 * grid.ds - SNAP_TOL:
        raise ParameterError(f"s_min must be at least 4*ds = {4 * grid.ds}")
    i0, i1 = grid.s_index(s_min), grid.s_index(S)
    J = grid.t_index(T)
    if i1 <= i0 or J < 2:
        raise ParameterError("integration domain is empty")

    def one(wb):
        return local_time_values(f, df, grid, wb, component, i0, i1, J)

    lhs, rhs = mc_map(one, grid, seed0, n, chunk=16, workers=workers)
    return LocalTimeReport(lhs, rhs, estimate(lhs - rhs, seed0), estimate(lhs, seed0), i0 * grid.ds,
                           i1 * grid.ds, J * grid.dt, component, grid, seed0)
