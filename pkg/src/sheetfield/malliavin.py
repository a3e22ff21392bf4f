"""Malliavin derivative of the solution for smoothed drifts, and the experiments built on it.

The derivative with respect to the noise at a base node ``(r, u)`` solves a
linear Goursat problem driven by the drift Jacobian along the solution.  Two
sweeps are provided: the forward sweep fixes the base node and returns the
field over all later nodes; the adjoint sweep fixes the target node and
returns the derivative at every base node at once.  Both use the same left
corner rule as :func:`~sheetfield.solver.solve_goursat_euler`, so they are the
exact derivatives of that scheme with respect to the cell increments.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import io as sio
from ._validation import check_positive_int, check_real, snap_index
from .calculus import girsanov_mean
from .drift import Bounded, MonotonePair, SmoothedDrift, mollify
from .errors import ParameterError, RegimeError
from .parallel import McEstimate, estimate, map_chunks, map_stack, mean_stderr, pairwise_sum
from .sheet import GridSpec, SheetPath, sheet_values
from .solver import SolutionField, as_boundary, euler_sweep, solve_goursat_euler

DEFAULT_C1 = 2.0


# ---------------------------------------------------------------- regimes

@dataclass(frozen=True)
class BoundedRegime:
    kind = "bounded"

    def as_dict(self):
        return {"kind": "bounded"}


@dataclass(frozen=True)
class SmallTime:
    """Horizon ``tau`` below which linear-growth drifts keep the moment bounds."""
    tau: float
    tau1: float = 1.0
    zeta: float = math.inf
    c1: float = DEFAULT_C1
    M: float = 0.0
    d: int = 1
    horizons: tuple = ()
    kind = "small_time"

    def check(self, s, t, what="target"):
        if s > self.tau or t > self.tau:
            raise RegimeError(f"{what} ({s:g}, {t:g}) lies outside the small-time regime tau={self.tau:.6g}",
                              tau=self.tau)

    def as_dict(self):
        return {"kind": "small_time", "tau": self.tau, "tau1": self.tau1, "zeta": self.zeta, "c1": self.c1,
                "M": self.M, "d": self.d, "horizons": [list(h) for h in self.horizons]}


def _linear_M(drift):
    g = drift.growth
    return 0.0 if isinstance(g, Bounded) else float(g.M)


@dataclass(frozen=True)
class Ungated:
    """Linear-growth drift used without a small-time horizon (pathwise quantities only)."""
    M: float
    kind = "ungated"

    def as_dict(self):
        return {"kind": "ungated", "M": self.M}


def resolve_regime(drift, regime, points, gate=True):
    """Default regime for ``drift``; with ``gate`` the target points must lie inside it."""
    if _linear_M(drift) == 0.0:
        return regime if regime is not None else BoundedRegime()
    if regime is None and not gate:
        return Ungated(_linear_M(drift))
    if not isinstance(regime, SmallTime):
        raise RegimeError("linear-growth drift needs a SmallTime regime; run small_time_regime first", tau=None)
    for s, t in points:
        regime.check(s, t)
    return regime


# ---------------------------------------------------------------- sweeps

def _as_smoothed(drift, level=None):
    if isinstance(drift, SmoothedDrift):
        return drift
    if isinstance(drift, MonotonePair) and level is not None:
        return mollify(drift, level)
    raise ParameterError("the Malliavin derivative needs a smoothed drift; call mollify first")


def jacobian_cells(drift, grid, x):
    """Jacobian times cell area at the lower-left node of every cell, plus the Gronwall rate.

    Returns ``(A, c)`` with ``A`` of shape ``(..., n_s, n_t, d, d)`` and
    ``c = sum_{j,k} (dhat + dcheck)[j, k] * area`` of shape ``(..., n_s, n_t)``.
    """
    s = grid.s_nodes[:-1, None]
    t = grid.t_nodes[None, :-1]
    jac, jh, jc = drift.gradient(s, t, np.asarray(x)[..., :-1, :-1, :])
    area = grid.cell_area
    return jac * area, (jh + jc).sum(axis=(-2, -1)) * area


def forward_sweep(A, i0, j0, start=None):
    """Field with base node ``(i0, j0)``: ``start`` on the two base lines, zero outside the cone."""
    *lead, n_s, n_t, d, _ = A.shape
    B = np.eye(d) if start is None else np.asarray(start, dtype=float)
    D = np.zeros(tuple(lead) + (n_s + 1, n_t + 1, d, d))
    D[..., i0, j0:, :, :] = B
    D[..., i0:, j0, :, :] = B
    for i in range(i0, n_s):
        prev = D[..., i, j0:, :, :]
        inc = prev[..., 1:, :, :] - prev[..., :-1, :, :] + A[..., i, j0:, :, :] @ prev[..., :-1, :, :]
        D[..., i + 1, j0 + 1:, :, :] = B + np.cumsum(inc, axis=-3)
    return D


def adjoint_sweep(A, I, J):
    """Derivative of the value at target node ``(I, J)`` with respect to every base node ``(a, b) <= (I, J)``.

    ``out[..., a, b]`` equals ``forward_sweep(A, a, b)[..., I, J]``.
    """
    *lead, _, _, d, _ = A.shape
    eye = np.eye(d)
    L = np.zeros(tuple(lead) + (I + 1, J + 1, d, d))
    L[..., I, :, :, :] = eye
    L[..., :, J, :, :] = eye
    for i in range(I - 1, -1, -1):
        nxt = L[..., i + 1, :, :, :]
        inc = nxt[..., :-1, :, :] - nxt[..., 1:, :, :] + nxt[..., 1:, :, :] @ A[..., i, :J, :, :]
        L[..., i, :J, :, :] = eye + np.cumsum(inc[..., ::-1, :, :], axis=-3)[..., ::-1, :, :]
    return L


def forward_log_bound(c, i0, j0):
    """Log of the pathwise exponential bound at every node for base ``(i0, j0)``."""
    out = np.zeros(c.shape[:-2] + (c.shape[-2] + 1, c.shape[-1] + 1))
    sub = c[..., i0:, j0:]
    out[..., i0 + 1:, j0 + 1:] = np.cumsum(np.cumsum(sub, axis=-2), axis=-1)
    return out


def adjoint_log_bound(c, I, J):
    """Log bound for every base node ``(a, b) <= (I, J)`` at the fixed target."""
    sub = c[..., :I, :J]
    out = np.zeros(c.shape[:-2] + (I + 1, J + 1))
    rev = np.cumsum(np.cumsum(sub[..., ::-1, ::-1], axis=-2), axis=-1)[..., ::-1, ::-1]
    out[..., :I, :J] = rev
    return out


def max_norm(D):
    return np.abs(D).max(axis=(-2, -1))


# ---------------------------------------------------------------- the field

@dataclass(frozen=True, eq=False)
class MalliavinField:
    grid: GridSpec
    base: tuple
    values: np.ndarray = field(repr=False)
    level: int
    regime: object
    drift_id: str
    seed: int
    log_bound: np.ndarray = field(repr=False, default=None)

    @property
    def base_point(self):
        return self.base[0] * self.grid.ds, self.base[1] * self.grid.dt

    def at(self, s, t):
        g = self.grid
        return self.values[snap_index(s, g.ds, g.n_s, "s"), snap_index(t, g.dt, g.n_t, "t")]

    @property
    def bound_ratio(self):
        """Largest ``|D|_max / exp(bound)`` over the cone."""
        i0, j0 = self.base
        ratio = max_norm(self.values[i0:, j0:]) * np.exp(-self.log_bound[i0:, j0:])
        return float(ratio.max())

    def metadata(self):
        return {"base": list(self.base), "base_point": list(self.base_point), "level": self.level,
                "regime": self.regime.as_dict(), "drift_id": self.drift_id, "seed": self.seed,
                "grid": self.grid.as_dict(), "bound_ratio": self.bound_ratio}


def save_malliavin(path, fld):
    d = fld.grid.d
    sio.write_grid_array(path, fld.grid, fld.values.reshape(fld.grid.n_s + 1, fld.grid.n_t + 1, d * d), fld.seed,
                         components=d * d)
    meta = fld.metadata()
    meta["log_bound"] = fld.log_bound.tolist()
    sio.write_sidecar(path, meta)


def load_malliavin(path):
    n_s, n_t, s_max, t_max, comps, seed, values = sio.read_grid_array(path)
    meta = sio.read_sidecar(path)
    d = int(round(math.sqrt(comps)))
    grid = GridSpec(n_s, n_t, s_max, t_max, d)
    reg = meta["regime"]
    if reg["kind"] == "bounded":
        regime = BoundedRegime()
    elif reg["kind"] == "ungated":
        regime = Ungated(reg["M"])
    else:
        regime = SmallTime(reg["tau"], reg["tau1"], reg["zeta"], reg["c1"], reg["M"], reg["d"],
                           tuple(map(tuple, reg["horizons"])))
    return MalliavinField(grid, tuple(meta["base"]), values.reshape(n_s + 1, n_t + 1, d, d), meta["level"], regime,
                          meta["drift_id"], seed, np.array(meta["log_bound"]))


def malliavin_derivative(drift, solution, r, u, sheet=None, regime=None, start=None):
    """Derivative field of ``solution`` with respect to the noise at the grid node ``(r, u)``."""
    drift = _as_smoothed(drift)
    if not isinstance(solution, SolutionField):
        raise ParameterError("solution must be a SolutionField")
    g = solution.grid
    if drift.d != g.d:
        raise ParameterError(f"drift dimension {drift.d} does not match solution d={g.d}")
    if sheet is not None and sheet.grid != g:
        raise ParameterError(f"sheet grid {sheet.grid} does not match solution grid {g}")
    i0 = snap_index(r, g.ds, g.n_s, "r")
    j0 = snap_index(u, g.dt, g.n_t, "u")
    regime = resolve_regime(drift, regime, [(g.s_max, g.t_max)], gate=False)
    A, c = jacobian_cells(drift, g, solution.values)
    D = forward_sweep(A, i0, j0, start)
    return MalliavinField(g, (i0, j0), D, drift.level, regime, drift.id, solution.seed, forward_log_bound(c, i0, j0))


# ---------------------------------------------------------------- finite differences

@dataclass
class FiniteDifferenceReport:
    response: np.ndarray
    reference: np.ndarray
    discrepancy: np.ndarray
    max_discrepancy: float
    delta: float
    width: float
    block: tuple
    reference_kind: str


def _block(grid, i_r, j_u, width):
    ws = max(1, int(round(width / grid.ds)))
    wt = max(1, int(round(width / grid.dt)))
    if ws < 2 or wt < 2:
        raise ParameterError(f"eps_width={width} is narrower than two cells")
    a0, b0 = i_r - ws // 2, j_u - wt // 2
    if a0 < 0 or b0 < 0 or a0 + ws > grid.n_s or b0 + wt > grid.n_t:
        raise ParameterError("the perturbation block does not fit inside the grid; choose an interior base point")
    return a0, b0, ws, wt


def finite_difference_check(drift, sheet, boundary, r, u, delta=1e-4, eps_width=None, target=None,
                            reference="point"):
    """Compare the response of the solution to a smeared noise shift with the derivative field.

    The noise is shifted by ``delta * H`` where ``dH`` has density ``1/eps^2`` on
    an ``eps`` block centred at ``(r, u)``, one component at a time.  The
    response at ``target`` is compared with ``D`` at the base node
    (``reference='point'``) or with the exact block average of ``D`` over the
    perturbed cells (``reference='block'``).
    """
    drift = _as_smoothed(drift)
    g = sheet.grid
    delta = check_real(delta, "delta", lo=0.0, lo_open=True)
    eps_width = 2 * max(g.ds, g.dt) if eps_width is None else check_real(eps_width, "eps_width", lo=0.0, lo_open=True)
    i_r = snap_index(r, g.ds, g.n_s, "r")
    j_u = snap_index(u, g.dt, g.n_t, "u")
    S, T = (g.s_max, g.t_max) if target is None else target
    I = snap_index(S, g.ds, g.n_s, "target s")
    J = snap_index(T, g.dt, g.n_t, "target t")
    a0, b0, ws, wt = _block(g, i_r, j_u, eps_width)
    if a0 + ws > I or b0 + wt > J:
        raise ParameterError("the target must lie beyond the perturbation block")
    boundary = as_boundary(boundary)
    base = solve_goursat_euler(drift, sheet, boundary)
    d = g.d
    mass = np.zeros((g.n_s, g.n_t))
    mass[a0:a0 + ws, b0:b0 + wt] = g.cell_area / (ws * g.ds * wt * g.dt)
    bump = np.zeros((g.n_s + 1, g.n_t + 1))
    bump[1:, 1:] = np.cumsum(np.cumsum(mass, axis=0), axis=1)
    response = np.zeros((d, d))
    for c in range(d):
        shifted = np.array(sheet.values)
        shifted[..., c] += delta * bump
        xs = solve_goursat_euler(drift, SheetPath(g, shifted, sheet.seed), boundary)
        response[:, c] = (xs.values[I, J] - base.values[I, J]) / delta
    A, _ = jacobian_cells(drift, g, base.values)
    if reference == "point":
        ref = forward_sweep(A[..., :I, :J, :, :], i_r, j_u)[I, J]
    elif reference == "block":
        lam = adjoint_sweep(A, I, J)
        ref = lam[a0 + 1:a0 + ws + 1, b0 + 1:b0 + wt + 1].mean(axis=(0, 1))
    else:
        raise ParameterError("reference must be 'point' or 'block'")
    disc = np.abs(response - ref)
    return FiniteDifferenceReport(response, ref, disc, float(disc.max()), delta, eps_width,
                                  (a0, b0, ws, wt), reference)


# ---------------------------------------------------------------- ensembles

def _seeds(seed0, n):
    return list(range(seed0, seed0 + check_positive_int(n, "n")))


def _solve_batch(drift, grid, seeds, xi):
    w = sheet_values(grid, seeds)
    ext = np.broadcast_to(np.asarray(xi, dtype=float), (grid.d,))
    return euler_sweep(drift, grid, w, ext)


def _node(grid, point, name="target"):
    s, t = point
    return snap_index(s, grid.ds, grid.n_s, f"{name} s"), snap_index(t, grid.dt, grid.n_t, f"{name} t")


def _trend(levels, means, errs):
    """Weighted least-squares slope of the estimates against the level, with its standard error."""
    x = np.asarray(levels, dtype=float)
    y = np.asarray(means, dtype=float)
    e = np.asarray(errs, dtype=float)
    if len(x) < 2:
        return 0.0, 0.0
    wts = 1.0 / np.maximum(e, 1e-300) ** 2 if np.all(e > 0) else np.ones_like(x)
    xb = np.sum(wts * x) / wts.sum()
    sxx = np.sum(wts * (x - xb) ** 2)
    slope = float(np.sum(wts * (x - xb) * (y - np.sum(wts * y) / wts.sum())) / sxx)
    se = float(math.sqrt(1.0 / sxx)) if np.all(e > 0) else 0.0
    return slope, se


@dataclass
class L2BoundsReport:
    levels: tuple
    points: tuple
    x_sq: dict
    d_sq_sup: dict
    sup_base: dict
    trend: dict
    trend_ok: bool
    band_ok: bool
    n: int
    seed0: int
    regime: object

    def table(self):
        rows = []
        for p in self.points:
            for lv in self.levels:
                ex, ed = self.x_sq[p][lv], self.d_sq_sup[p][lv]
                rows.append({"s": p[0], "t": p[1], "level": lv, "E|X|^2": ex.mean, "E|X|^2_se": ex.stderr,
                             "supE|D|^2": ed.mean, "supE|D|^2_se": ed.stderr,
                             "base_r": self.sup_base[p][lv][0], "base_u": self.sup_base[p][lv][1]})
        return rows


def l2_bounds_experiment(drift, levels, points=((1.0, 1.0),), grid=None, seed0=0, n=10_000, xi=0.0, regime=None,
                         workers=None, chunk=64):
    """Second moments of the solution and of its derivative at each smoothing level.

    ``drift`` is the unsmoothed pair; every level reuses the same noise paths.
    """
    if not isinstance(drift, MonotonePair):
        raise ParameterError("pass the unsmoothed drift; levels are applied here")
    g = GridSpec.square(32, drift.d) if grid is None else grid
    levels = tuple(check_positive_int(lv, "level") for lv in levels)
    points = tuple(tuple(float(c) for c in p) for p in points)
    nodes = [_node(g, p) for p in points]
    regime = resolve_regime(drift, regime, points)
    seeds = _seeds(seed0, n)
    x_sq, d_sq, sup_base = ({p: {} for p in points} for _ in range(3))
    trend, trend_ok, band_ok = {}, True, True
    for lv in levels:
        sm = mollify(drift, lv)

        def one(batch, sm=sm):
            x = _solve_batch(sm, g, batch, xi)
            A, _ = jacobian_cells(sm, g, x)
            xs, ds = [], []
            for I, J in nodes:
                xs.append(np.abs(x[:, I, J, :]).max(axis=-1) ** 2)
                dn = max_norm(adjoint_sweep(A[:, :I, :J], I, J)) ** 2
                ds.append(np.stack([dn.sum(axis=0), (dn * dn).sum(axis=0)])[None])
            return tuple(xs) + tuple(ds)

        outs = map_chunks(one, seeds, chunk, workers)
        k = len(nodes)
        for idx, p in enumerate(points):
            xv = np.concatenate([o[idx] for o in outs])
            x_sq[p][lv] = estimate(xv, seed0)
            sums = pairwise_sum(np.concatenate([o[k + idx] for o in outs]), axis=0)
            m = sums[0] / n
            var = np.maximum(sums[1] / n - m * m, 0.0) * n / max(n - 1, 1)
            a, b = np.unravel_index(int(np.argmax(m)), m.shape)
            d_sq[p][lv] = McEstimate(float(m[a, b]), float(math.sqrt(var[a, b] / n)), n, seed0)
            sup_base[p][lv] = (a * g.ds, b * g.dt)
    for p in points:
        for name, table in (("x", x_sq[p]), ("d", d_sq[p])):
            ests = [table[lv] for lv in levels]
            slope, se = _trend(levels, [e.mean for e in ests], [e.stderr for e in ests])
            ok = slope - 1.96 * se <= 0.0
            trend[(p, name)] = (slope, se, ok)
            trend_ok &= ok
            ref = ests[-1]
            band_ok &= all(abs(e.mean - ref.mean) <= 3 * math.hypot(e.stderr, ref.stderr) + 1e-12 for e in ests)
    return L2BoundsReport(levels, points, x_sq, d_sq, sup_base, trend, trend_ok, band_ok, n, seed0, regime)


# ---------------------------------------------------------------- Hoelder regularity in the base point

@dataclass
class HolderReport:
    pairs: list
    distances: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    constant: float
    ok: bool
    n: int

    def table(self):
        return [{"r": p[0][0], "u": p[0][1], "r2": p[1][0], "u2": p[1][1], "distance": float(dd),
                 "E|dD|^2": float(m), "stderr": float(e)}
                for p, dd, m, e in zip(self.pairs, self.distances, self.means, self.stderrs)]


def default_base_pairs(grid, target, count=64, seed=0):
    """Base-point pairs below ``target`` stratified by dyadic distance (in cells)."""
    I, J = _node(grid, target)
    gen = np.random.default_rng(seed)
    span = min(I, J)
    dists = [2**k for k in range(int(math.log2(max(span, 1))) + 1) if 2**k <= span]
    if not dists:
        raise ParameterError("target too close to the axes for base-point pairs")
    pairs = []
    for k in range(count):
        dist = dists[k % len(dists)]
        da = int(gen.integers(0, dist + 1))
        db = dist - da
        a = int(gen.integers(0, I - da + 1))
        b = int(gen.integers(0, J - db + 1))
        pairs.append(((a * grid.ds, b * grid.dt), ((a + da) * grid.ds, (b + db) * grid.dt)))
    return pairs


def holder_experiment(drift, target=(1.0, 1.0), pairs=None, grid=None, seed0=0, n=1000, xi=0.0, regime=None,
                      workers=None, chunk=64):
    """Mean squared change of ``D_{r,u} X_{s,t}`` between base points, regressed on their distance."""
    drift = _as_smoothed(drift)
    g = GridSpec.square(32, drift.d) if grid is None else grid
    resolve_regime(drift, regime, [target], gate=False)
    I, J = _node(g, target)
    pairs = default_base_pairs(g, target) if pairs is None else list(pairs)
    idx = []
    for p, q in pairs:
        a, b = _node(g, p, "base")
        a2, b2 = _node(g, q, "base")
        if max(a, a2) > I or max(b, b2) > J:
            raise ParameterError(f"base pair {p}, {q} is not below the target")
        idx.append((a, b, a2, b2))
    idx = np.array(idx).reshape(-1, 4)
    dist = np.abs(idx[:, 0] - idx[:, 2]) * g.ds + np.abs(idx[:, 1] - idx[:, 3]) * g.dt
    if len(np.unique(dist[dist > 0])) < 2:
        raise ParameterError("need base pairs at two or more distinct positive distances")

    def one(batch):
        x = _solve_batch(drift, g, batch, xi)
        A, _ = jacobian_cells(drift, g, x)
        lam = adjoint_sweep(A[:, :I, :J], I, J)
        diff = lam[:, idx[:, 0], idx[:, 1]] - lam[:, idx[:, 2], idx[:, 3]]
        return max_norm(diff) ** 2

    vals = map_stack(one, _seeds(seed0, n), chunk, workers)
    means, errs = mean_stderr(vals, axis=0)
    use = (dist > 0) & (means > 0)
    if use.sum() >= 2 and len(np.unique(dist[use])) >= 2:
        X = np.log(dist[use])
        Y = np.log(means[use])
        coef, cov = np.polyfit(X, Y, 1, cov=True) if use.sum() > 2 else (np.polyfit(X, Y, 1), np.zeros((2, 2)))
        slope, intercept = float(coef[0]), float(coef[1])
        se = float(math.sqrt(max(cov[0, 0], 0.0)))
        ok = slope + 1.96 * se >= 1.0
        const = float(np.max(means[dist > 0] / dist[dist > 0]))
    else:
        # every difference vanished: the bound holds with any constant
        slope, se, intercept, const, ok = math.nan, math.nan, -math.inf, 0.0, bool(np.all(means == 0))
    return HolderReport([tuple(map(tuple, p)) for p in pairs], dist, means, errs, slope, se, intercept, const, ok, n)


# ---------------------------------------------------------------- fractional Sobolev functional

@dataclass
class DerivativeSamples:
    """Block-averaged ``D_{r,u} X_{s,t}`` over a ``K x K`` partition of the base domain, per path.

    Base points beyond the target carry ``D = 0``.
    """
    grid: GridSpec
    target: tuple
    K: int
    values: np.ndarray = field(repr=False)
    level: int
    seeds: tuple

    def coarsen(self, K):
        K = check_positive_int(K, "K")
        if self.K % K:
            raise ParameterError(f"K={K} does not divide {self.K}")
        f = self.K // K
        v = self.values
        v = v.reshape(v.shape[0], K, f, K, f, *v.shape[-2:]).mean(axis=(2, 4))
        return DerivativeSamples(self.grid, self.target, K, v, self.level, self.seeds)


def derivative_samples(drift, target=(0.5, 0.5), K=None, grid=None, seed0=0, n=200, xi=0.0, regime=None,
                       workers=None, chunk=16):
    drift = _as_smoothed(drift)
    g = GridSpec.square(64, drift.d) if grid is None else grid
    resolve_regime(drift, regime, [target], gate=False)
    K = g.n_s if K is None else check_positive_int(K, "K")
    if g.n_s != g.n_t or g.n_s % K:
        raise ParameterError("need a square grid whose size is a multiple of K")
    I, J = _node(g, target)
    f = g.n_s // K
    d = g.d

    def one(batch):
        x = _solve_batch(drift, g, batch, xi)
        A, _ = jacobian_cells(drift, g, x)
        lam = adjoint_sweep(A[:, :I, :J], I, J)
        full = np.zeros((len(batch), g.n_s + 1, g.n_t + 1, d, d))
        full[:, :I + 1, :J + 1] = lam
        cells = 0.25 * (full[:, :-1, :-1] + full[:, 1:, :-1] + full[:, :-1, 1:] + full[:, 1:, 1:])
        return cells.reshape(len(batch), K, f, K, f, d, d).mean(axis=(2, 4))

    vals = map_stack(one, _seeds(seed0, n), chunk, workers)
    return DerivativeSamples(g, tuple(target), K, vals, drift.level, tuple(_seeds(seed0, n)))


@dataclass
class SobolevReport:
    beta: float
    K: int
    value: float
    stderr: float
    n: int


def _pair_weights(K, side_s, side_t, beta):
    hs, ht = side_s / K, side_t / K
    ks = np.arange(K)
    ds_ = np.abs(ks[:, None] - ks[None, :]) * hs
    dt_ = np.abs(ks[:, None] - ks[None, :]) * ht
    dist = ds_[:, None, :, None] + dt_[None, :, None, :]
    with np.errstate(divide="ignore"):
        w = np.where(dist > 0, dist ** (-(2.0 + 2.0 * beta)), 0.0)
    return w.reshape(K * K, K * K) * (hs * ht) ** 2


def sobolev_functional(samples, beta):
    """Monte Carlo estimate of the fractional Sobolev double integral of ``(r, u) -> D_{r,u} X_{s,t}``.

    Midpoint sum over distinct pairs of base cells of ``E|D_a - D_b|_F^2 / (|dr| + |du|)^(2 + 2 beta)``.
    """
    beta = check_real(beta, "beta", lo=0.0, hi=1.0, lo_open=True, hi_open=True)
    K = samples.K
    g = samples.grid
    w = _pair_weights(K, g.s_max, g.t_max, beta)
    v = samples.values.reshape(samples.values.shape[0], K * K, -1)
    sq = (v * v).sum(axis=-1)
    rows = w.sum(axis=1)
    # sum_ab w_ab |D_a - D_b|^2 = 2 sum_a |D_a|^2 row_a - 2 sum_ab w_ab <D_a, D_b>
    cross = np.einsum("pak,pak->p", v, np.einsum("ab,pbk->pak", w, v))
    per_path = 2.0 * sq @ rows - 2.0 * cross
    per_path = np.maximum(per_path, 0.0)
    m, e = mean_stderr(per_path)
    return SobolevReport(beta, K, float(m), float(e), len(per_path))


@dataclass
class SobolevRefinement:
    beta: float
    Ks: tuple
    values: tuple
    increments: tuple
    growth_exponent: float
    diverging: bool


def sobolev_refinement(samples, beta, Ks=None):
    """Functional on successively finer base partitions.

    The increments between successive partitions scale like ``K^p``; ``p > 0``
    (increments growing under refinement) marks a divergent integral.
    """
    Ks = tuple(sorted(Ks if Ks is not None else [samples.K // 2**k for k in range(4) if samples.K % 2**k == 0
                                                   and samples.K // 2**k >= 2]))
    if len(Ks) < 3:
        raise ParameterError("need at least three partitions to judge the refinement trend")
    vals = tuple(sobolev_functional(samples.coarsen(K), beta).value for K in Ks)
    inc = np.diff(vals)
    if np.any(inc <= 0):
        p = -math.inf if np.all(inc <= 0) else math.nan
    else:
        p = float(np.polyfit(np.log(Ks[1:]), np.log(inc), 1)[0])
    return SobolevRefinement(beta, Ks, vals, tuple(inc), p, bool(p > 0))


# ---------------------------------------------------------------- strong convergence in the smoothing level

@dataclass
class StrongConvergenceReport:
    levels: tuple
    reference: int
    target: tuple
    mse: dict
    weak_identity: dict
    weak_bounded: dict
    decreasing: bool
    n: int

    def table(self):
        return [{"level": lv, "E|X^n-X^ref|^2": self.mse[lv].mean, "stderr": self.mse[lv].stderr,
                 "E[X^n]-E[X^ref]": self.weak_identity[lv], "E[tanh X^n]-E[tanh X^ref]": self.weak_bounded[lv]}
                for lv in self.levels if lv != self.reference]


def strong_convergence_diag(drift, levels=(2, 4, 8, 16, 32), target=(1.0, 1.0), grid=None, seed0=0, n=1000, xi=0.0,
                            workers=None, chunk=64):
    """Mean squared distance of each smoothing level to the finest one on a shared noise ensemble."""
    if not isinstance(drift, MonotonePair):
        raise ParameterError("pass the unsmoothed drift; levels are applied here")
    g = GridSpec.square(64, drift.d) if grid is None else grid
    levels = tuple(sorted(check_positive_int(lv, "level") for lv in levels))
    ref = levels[-1]
    I, J = _node(g, target)
    smoothed = [mollify(drift, lv) for lv in levels]

    def one(batch):
        w = sheet_values(g, batch)
        ext = np.broadcast_to(np.asarray(xi, dtype=float), (g.d,))
        return np.stack([euler_sweep(sm, g, w, ext)[:, I, J, :] for sm in smoothed], axis=1)

    xs = map_stack(one, _seeds(seed0, n), chunk, workers)
    x_ref = xs[:, -1]
    mse, weak_id, weak_b = {}, {}, {}
    for k, lv in enumerate(levels[:-1]):
        diff = xs[:, k] - x_ref
        mse[lv] = estimate((diff * diff).sum(axis=-1), seed0)
        weak_id[lv] = float(np.abs(pairwise_sum(diff, axis=0) / n).max())
        weak_b[lv] = float(np.abs(pairwise_sum(np.tanh(xs[:, k]) - np.tanh(x_ref), axis=0) / n).max())
    means = [mse[lv].mean for lv in levels[:-1]]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    return StrongConvergenceReport(levels, ref, tuple(target), mse, weak_id, weak_b, decreasing, n)


# ---------------------------------------------------------------- small-time regime

def small_time_regime(drift, target=None, c1=DEFAULT_C1, horizons=None, grid_n=16, seed0=0, n=4000, workers=None):
    """Horizon for linear-growth drifts: ``tau = min(tau1, zeta / (32 d^2))`` with ``zeta = 1/(2^6 c1^2 M)``.

    ``tau1`` is the largest probed horizon at which the Monte Carlo second
    moment of the Girsanov weight is finite and agrees between two independent
    halves of the ensemble.
    """
    c1 = check_real(c1, "c1", lo=0.0, lo_open=True)
    d = drift.d
    M = _linear_M(drift)
    horizons = tuple(sorted((2.0**-k for k in range(0, 15)) if horizons is None else horizons, reverse=True))
    table = []
    tau1 = None
    half = max(1, n // 2)
    if drift.is_zero or M == 0.0:
        tau1 = 1.0
    else:
        for h in horizons:
            g = GridSpec(grid_n, grid_n, h, h, d)
            try:
                _, a = girsanov_mean(drift, g, seed0, half, workers=workers)
                _, b = girsanov_mean(drift, g, seed0 + half, half, workers=workers)
            except OverflowError:
                table.append((h, math.inf, math.inf, False))
                continue
            stable = (math.isfinite(a.mean) and math.isfinite(b.mean)
                      and abs(a.mean - b.mean) <= 3 * math.hypot(a.stderr, b.stderr)
                      and max(a.stderr / a.mean, b.stderr / b.mean) <= 0.25)
            table.append((h, a.mean, b.mean, stable))
            if stable:
                tau1 = h
                break
        if tau1 is None:
            raise RegimeError(f"no stable horizon down to {horizons[-1]:g}; try a smaller growth constant M (now {M})",
                              tau=None)
    tau1 = min(tau1, 1.0)
    zeta = math.inf if M == 0.0 else 1.0 / (2**6 * c1 * c1 * M)
    tau = min(tau1, zeta / (32 * d * d), 1.0)
    reg = SmallTime(tau, tau1, zeta, c1, M, d, tuple(table))
    if target is not None:
        reg.check(*target)
    return reg
