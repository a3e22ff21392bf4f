"""Monte-Carlo checks of the averaging-operator bounds, tail and moment bounds,
the Gronwall recursion and path-by-path uniqueness."""
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_int, check_real
from .drift import Bounded
from .errors import NonConvergenceError, ParameterError, RegimeError
from .parallel import map_chunks, map_stack, mean_stderr
from .sheet import GridSpec, SheetPath, generate_sheet, rescale, sheet_values
from .solver import Axes, cell_times, corner_mean, solve_goursat_euler, solve_perturbation, solve_picard


@dataclass(frozen=True)
class DyadicCell:
    """``(k 2^-n, (k+1) 2^-n] x (k' 2^-n, (k'+1) 2^-n]`` with k along s and k' along t."""

    n: int
    k: int
    kp: int

    def __post_init__(self):
        check_positive_int(self.n, "n")
        if not (0 <= self.k < 2**self.n and 0 <= self.kp < 2**self.n):
            raise ParameterError(f"cell indices out of range for level {self.n}")

    def cell_slices(self, grid):
        ms, mt = _cells_per_interval(grid, self.n)
        return slice(self.k * ms, (self.k + 1) * ms), slice(self.kp * mt, (self.kp + 1) * mt)


def _cells_per_interval(grid, n):
    m = 2**n
    if abs(grid.s_max - 1) > 1e-12 or abs(grid.t_max - 1) > 1e-12 or grid.n_s % m or grid.n_t % m:
        raise ParameterError(f"grid {grid.n_s}x{grid.n_t} on [0,1]^2 is not refined enough for level {n}")
    return grid.n_s // m, grid.n_t // m


def _check_bounded(drift, limit=1.0):
    g = getattr(drift, "growth", None)
    if not isinstance(g, Bounded) or g.bound > limit * (1 + 1e-12):
        raise ParameterError(f"drift must be bounded by {limit} (rescale it first)")


def drift_difference_cells(drift, grid, w, x, y):
    """Cellwise ``{b(W+x) - b(W+y)} ds dt`` with W at cell centres (midpoint rule)."""
    wm = corner_mean(w)
    s, t = cell_times(grid, "mid")
    return (drift(s, t, wm + x) - drift(s, t, wm + y)) * grid.cell_area


def block_sums(cells, n):
    """Sum cell values over the ``2^n x 2^n`` dyadic blocks."""
    *batch, ns, nt, d = cells.shape
    m = 2**n
    return cells.reshape(*batch, m, ns // m, m, nt // m, d).sum(axis=(-4, -2))


def rho(cell, x, y, sheet, drift):
    """Midpoint-rule average of ``b(W+x) - b(W+y)`` over one dyadic cell."""
    g = sheet.grid
    x = np.broadcast_to(np.asarray(x, float), (g.d,))
    y = np.broadcast_to(np.asarray(y, float), (g.d,))
    if np.any(np.abs(x) > 1) or np.any(np.abs(y) > 1):
        raise ParameterError("x and y must lie in [-1, 1]^d")
    si, ti = cell.cell_slices(g)
    wm = corner_mean(sheet.values)[si, ti]
    s, t = cell_times(g, "mid")
    s, t = s[si], t[:, ti]
    return ((drift(s, t, wm + x) - drift(s, t, wm + y)) * g.cell_area).sum(axis=(0, 1))


# ---------------------------------------------------------------- constant fits

def log_plus(z):
    return np.maximum(0.0, np.log(z))


def pseudo_metric_denominator(n, x, y):
    h = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))))
    if h == 0:
        return 0.0
    return 2.0**-n * (math.sqrt(n) + math.sqrt(log_plus(1.0 / h))) * h


def origin_denominator(n, x):
    ax = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float))))
    return math.sqrt(n) * 2.0**-n * (ax + 2.0 ** -(4.0**n))


@dataclass
class FitReport:
    kind: str
    constant: float
    level_maxima: dict
    path_maxima: np.ndarray
    levels: tuple
    seeds: tuple
    stability_ratio: float
    meta: dict = field(default_factory=dict)

    def violation_fraction(self, constant, safety=2.0):
        """Fraction of this report's paths whose maximal ratio exceeds ``safety * constant``."""
        return float(np.mean(self.path_maxima > safety * constant))

    def table(self):
        return [{"level": n, "max_ratio": self.level_maxima[n]} for n in self.levels]


def default_pairs(d=1):
    """Pairs ``c +- h/2`` for h = 2^-1 .. 2^-8 around c = 0 and c = 0.5."""
    out = []
    for c in (0.0, 0.5):
        for e in range(1, 9):
            h = 2.0**-e
            out.append((np.full(d, c + h / 2), np.full(d, c - h / 2)))
    return out


def default_origin_points(d=1, n_s=512):
    """``+-2^-e`` down to the grid's resolution ``2^-e >= 1/(2 n_s)``.

    Smaller points are dominated by midpoint granularity: one cell whose centre
    value falls in the band contributes twice its area however thin the band is.
    """
    e_max = int(math.floor(math.log2(2 * n_s)))
    return [np.full(d, sgn * 2.0**-e) for e in range(1, e_max + 1) for sgn in (1.0, -1.0)]


def _ratio_maxima(drift, grid, w, pairs, dens, levels):
    """Per path, per level maximal |rho| / denominator over cells and pairs."""
    wm = corner_mean(w)
    s, t = cell_times(grid, "mid")
    cache = {}

    def value(p):
        key = tuple(np.asarray(p, float).ravel())
        if key not in cache:
            cache[key] = drift(s, t, wm + p)
        return cache[key]

    out = np.zeros((w.shape[0], len(levels)))
    for (x, y), den_row in zip(pairs, dens):
        cells = (value(x) - value(y)) * grid.cell_area
        for li, n in enumerate(levels):
            if den_row[li] == 0:
                continue
            r = np.linalg.norm(block_sums(cells, n), axis=-1).max(axis=(-2, -1))
            out[:, li] = np.maximum(out[:, li], r / den_row[li])
    return out


def _fit(kind, drift, grid, seeds, pairs, dens, levels, workers, chunk=8):
    for n in levels:
        _cells_per_interval(grid, n)
    per = map_stack(lambda ss: _ratio_maxima(drift, grid, sheet_values(grid, ss), pairs, dens, levels),
                    list(seeds), chunk=chunk, workers=workers)
    level_max = {n: float(per[:, i].max()) for i, n in enumerate(levels)}
    vals = np.array(list(level_max.values()))
    med = float(np.median(vals))
    stab = float(vals.max() / med) if med > 0 else (1.0 if vals.max() == 0 else np.inf)
    return FitReport(kind, float(per.max()), level_max, per.max(axis=1), tuple(levels), tuple(seeds), stab,
                     {"grid": grid.as_dict(), "drift": getattr(drift, "id", "custom")})


def pseudo_metric_fit(drift, levels, pairs=None, grid=None, seeds=range(200), workers=None, check_bound=True):
    """Fit C1 in ``|rho(x,y)| <= C1 2^-n [sqrt n + log+(1/|x-y|)^(1/2)] |x-y|``."""
    if check_bound:
        _check_bounded(drift)
    grid = grid or GridSpec.square(512, getattr(drift, "d", 1))
    pairs = default_pairs(grid.d) if pairs is None else [(np.asarray(a, float), np.asarray(b, float)) for a, b in pairs]
    if not pairs:
        raise ParameterError("pair set is empty")
    levels = tuple(sorted(levels))
    dens = [[pseudo_metric_denominator(n, x, y) for n in levels] for x, y in pairs]
    return _fit("C1", drift, grid, seeds, pairs, dens, levels, workers)


def origin_fit(drift, levels, points=None, grid=None, seeds=range(200), workers=None, check_bound=True):
    """Fit C2 in ``|rho(0,x)| <= C2 sqrt(n) 2^-n (|x| + 2^(-4^n))``."""
    if check_bound:
        _check_bounded(drift)
    grid = grid or GridSpec.square(512, getattr(drift, "d", 1))
    points = default_origin_points(grid.d, grid.n_s) if points is None else [np.asarray(p, float) for p in points]
    if not points:
        raise ParameterError("point set is empty")
    levels = tuple(sorted(levels))
    zero = np.zeros(grid.d)
    pairs = [(zero, np.broadcast_to(p, (grid.d,))) for p in points]
    dens = [[origin_denominator(n, p) for n in levels] for p in points]
    return _fit("C2", drift, grid, seeds, pairs, dens, levels, workers)


# ---------------------------------------------------------------- tail bound

@dataclass
class TailReport:
    eta: np.ndarray
    p_hat: np.ndarray
    hits: np.ndarray
    alpha: float
    intercept: float
    r2: float
    used: np.ndarray
    truncated: bool
    n: int
    normalized: np.ndarray = field(repr=False, default=None)

    def table(self):
        return [{"eta": float(e), "p_hat": float(p), "hits": int(h), "used": bool(u)}
                for e, p, h, u in zip(self.eta, self.p_hat, self.hits, self.used)]


def rect_rho_values(drift, grid, w, rect, x, y):
    i0, i1, j0, j1 = rect.indices(grid)
    cells = drift_difference_cells(drift, grid, w, x, y)
    return cells[..., i0:i1, j0:j1, :].sum(axis=(-3, -2))


def tail_experiment(drift, rect, x, y, eta=None, grid=None, seed0=0, n=100_000, min_hits=50, workers=None,
                    check_bound=True):
    """Exceedance probabilities of ``|rho| / (sqrt(area) |x-y|)`` and a fit of ``log p`` against ``eta^2``."""
    if check_bound:
        _check_bounded(drift)
    grid = grid or GridSpec.square(64, getattr(drift, "d", 1))
    x = np.broadcast_to(np.asarray(x, float), (grid.d,))
    y = np.broadcast_to(np.asarray(y, float), (grid.d,))
    h = float(np.linalg.norm(x - y))
    if h == 0:
        raise ParameterError("x and y must differ")
    vals = map_stack(lambda ss: rect_rho_values(drift, grid, sheet_values(grid, ss), rect, x, y),
                     list(range(seed0, seed0 + n)), chunk=256, workers=workers)
    z = np.linalg.norm(vals, axis=-1) / (math.sqrt(rect.area) * h)
    if eta is None:
        zs = np.sort(z)
        lo = float(np.median(z))
        hi = float(zs[-min_hits]) if len(zs) >= min_hits else lo
        eta = np.linspace(lo, hi, 12) if hi > lo else np.array([lo])
    eta = np.asarray(eta, dtype=float)
    hits = np.array([(z >= e).sum() for e in eta])
    p = hits / n
    used = (hits >= min_hits) & (p < 1.0)
    truncated = bool(np.any(hits < min_hits))
    alpha = intercept = r2 = float("nan")
    if used.sum() >= 3:
        xx = eta[used] ** 2
        yy = np.log(p[used])
        wts = hits[used] / (1.0 - p[used])
        A = np.stack([np.ones_like(xx), xx], axis=1) * np.sqrt(wts)[:, None]
        coef, *_ = np.linalg.lstsq(A, yy * np.sqrt(wts), rcond=None)
        intercept, slope = float(coef[0]), float(coef[1])
        alpha = -slope
        fit = coef[0] + coef[1] * xx
        ybar = np.sum(wts * yy) / np.sum(wts)
        ss_res = np.sum(wts * (yy - fit) ** 2)
        ss_tot = np.sum(wts * (yy - ybar) ** 2)
        r2 = float(1 - ss_res / ss_tot) if ss_tot > 0 else 1.0
    return TailReport(eta, p, hits, alpha, intercept, r2, used, truncated, n, z)


# ---------------------------------------------------------------- exponential moment

@dataclass
class ExpMomentReport:
    alpha: np.ndarray
    mean_n: np.ndarray
    stderr_n: np.ndarray
    mean_2n: np.ndarray
    stderr_2n: np.ndarray
    stable: np.ndarray
    overflow: np.ndarray
    largest_stable_alpha: float
    n: int

    def table(self):
        return [{"alpha": float(a), "mean_N": float(m1), "stderr_N": float(s1), "mean_2N": float(m2),
                 "stderr_2N": float(s2), "stable": bool(st), "overflow": bool(o)}
                for a, m1, s1, m2, s2, st, o in zip(self.alpha, self.mean_n, self.stderr_n, self.mean_2n,
                                                    self.stderr_2n, self.stable, self.overflow)]


def gradient_integral_sq(drift, w_tilde, grid):
    """``|int int grad b(s, t, W~)|^2`` (Frobenius norm) with the midpoint rule on the unit square."""
    s, t = cell_times(grid, "mid")
    jac = drift.gradient(s, t, corner_mean(w_tilde))[0]
    integral = jac.sum(axis=(-4, -3)) * grid.cell_area
    return (integral**2).sum(axis=(-2, -1))


def exp_moment_experiment(drift, a_t, a_s, eps_t, eps_s, alphas, grid=None, seed0=0, n=10_000, workers=None,
                          check_bound=True):
    """``E exp(alpha eps eps' |int int grad b(W~)|^2)`` for a smoothed drift, at N and 2N paths."""
    if check_bound:
        _check_bounded(drift)
    if not hasattr(drift, "gradient"):
        raise ParameterError("exponential-moment experiment needs a smoothed drift")
    grid = grid or GridSpec.square(64, drift.d)
    alphas = np.asarray(alphas, dtype=float)
    scale = eps_s * eps_t

    def one(seeds):
        w = sheet_values(grid, seeds)
        out = np.empty(len(seeds))
        for k, seed in enumerate(seeds):
            wt = rescale(SheetPath(grid, w[k], seed), a_s, a_t, eps_s, eps_t)
            out[k] = gradient_integral_sq(drift, wt.values, wt.grid)
        return out

    q = map_stack(one, list(range(seed0, seed0 + 2 * n)), chunk=64, workers=workers)
    rows = []
    for a in alphas:
        expo = a * scale * q
        over = bool(np.any(expo > 709.0))
        e = np.exp(np.minimum(expo, 709.0))
        m1, s1 = mean_stderr(e[:n])
        m2, s2 = mean_stderr(e)
        stable = (not over) and np.isfinite(m2) and abs(m1 - m2) <= 3 * math.hypot(s1, s2) + 1e-300 \
            and (s2 <= 0.25 * m2)
        rows.append((float(m1), float(s1), float(m2), float(s2), bool(stable), over))
    m1, s1, m2, s2, st, ov = (np.array(c) for c in zip(*rows)) if rows else [np.array([])] * 6
    stable_alphas = alphas[st.astype(bool)] if len(alphas) else alphas
    largest = float(stable_alphas.max()) if len(stable_alphas) else float("nan")
    return ExpMomentReport(alphas, m1, s1, m2, s2, st.astype(bool), ov.astype(bool), largest, n)


# ---------------------------------------------------------------- Gronwall recursion

def default_beta(n, floor_exp=60):
    """Midpoint exponent of the admissible interval, clamped at ``2^-floor_exp``.

    Returns ``(beta, log2_beta_unclamped, clamped)``.
    """
    log2 = -(4.0 ** (17.0 * n / 24.0))
    clamped = log2 < -floor_exp
    return 2.0 ** max(log2, -floor_exp), log2, clamped


def beta_interval(n):
    """``(log2 lower, log2 upper)`` of the admissible boundary size."""
    return -(4.0 ** (3.0 * n / 4.0)), -(4.0 ** (2.0 * n / 3.0))


def regime_value(C2, d, n):
    return C2 * math.sqrt(d * n) * 2.0**-n


def minimal_level(C2, d, threshold):
    for n in range(1, 200):
        if all(regime_value(C2, d, m) <= threshold for m in range(n, n + 8)):
            return n
    raise RegimeError("no admissible level below 200", C2=C2)


@dataclass
class GronwallReport:
    n: int
    beta: float
    beta_clamped: bool
    beta_in_interval: bool
    C2: float
    regime_value: float
    regime_ok: bool
    minimal_n: int
    cells: list
    max_ratio: float
    violations: int
    terminal_sup: float
    terminal_log2_bound: float
    terminal_ok: bool
    iterations: int


def _cell_sups(u, grid, n):
    ms, mt = _cells_per_interval(grid, n)
    m = 2**n
    # nodes strictly inside (k ms, (k+1) ms] along each axis
    inner = u[..., 1:, 1:, :]
    blocks = inner.reshape(m, ms, m, mt, grid.d)
    up = np.maximum(blocks, 0).max(axis=(1, 3))
    down = np.maximum(-blocks, 0).max(axis=(1, 3))
    return up, down


def gronwall_recursion(drift, sheet, n, C2, beta=None, threshold=1.0 / 9.0, boundary=None, tol=1e-14,
                       max_iter=500, safety=1.0, enforce_regime=True):
    """Cellwise suprema of the perturbation with small boundary data against the recursive bound.

    Outside the smallness regime a RegimeError is raised unless ``enforce_regime`` is False, in
    which case the bound is still evaluated and the violation is recorded in the report.
    """
    g = sheet.grid
    d = g.d
    n = check_positive_int(n, "n")
    C2_eff = safety * check_real(C2, "C2", lo=0.0)
    rv = regime_value(C2_eff, d, n)
    n_min = minimal_level(C2_eff, d, threshold)
    regime_ok = rv <= threshold
    if not regime_ok and enforce_regime:
        raise RegimeError(f"level n={n} outside the smallness regime (C2 sqrt(dn) 2^-n = {rv:.4g} > "
                          f"{threshold:.4g}); minimal admissible n = {n_min}", minimal_n=n_min)
    if beta is None:
        beta, _, clamped = default_beta(n)
    else:
        beta, clamped = check_real(beta, "beta", lo=0.0, lo_open=True), False
    lo, hi = beta_interval(n)
    in_interval = lo <= math.log2(beta) <= hi
    if boundary is None:
        boundary = Axes(lambda t: beta * np.cos(np.pi * t), lambda s: beta * np.cos(np.pi * s), "beta*cos(pi.)")
    sol = solve_perturbation(drift, sheet, boundary, tol=max(tol, beta * 1e-12), max_iter=max_iter)
    up, down = _cell_sups(sol.values, g, n)
    m = 2**n
    k = np.arange(1, m + 1)
    kk = k[:, None] + k[None, :]
    log_bound = (kk - 1) * math.log(3) + kk * math.log1p(3 * C2_eff * math.sqrt(d * n) * 2.0**-n) + math.log(beta)
    with np.errstate(divide="ignore"):
        worst = np.maximum(up, down).max(axis=-1)
        ratio = np.where(worst > 0, np.exp(np.log(np.where(worst > 0, worst, 1.0)) - log_bound), 0.0)
    cells = [{"k": int(a + 1), "kp": int(b + 1), "u_plus": float(up[a, b].max()), "u_minus": float(down[a, b].max()),
              "log_bound": float(log_bound[a, b]), "ratio": float(ratio[a, b])}
             for a in range(m) for b in range(m)]
    sup = float(np.abs(sol.values).max())
    log2_term = 2.0 ** (n + 2) + math.log2(beta)
    term_ok = sup == 0 or math.log2(sup) <= log2_term
    return GronwallReport(n, beta, clamped, in_interval, C2_eff, rv, regime_ok, n_min, cells, float(ratio.max()),
                          int((ratio > 1).sum()), sup, log2_term, term_ok, sol.iterations)


# ---------------------------------------------------------------- uniqueness

EXACT_TOL = 1e-12
DEFAULT_STARTS = ("zero", "plus_half", "minus_half", "ramp_up", "ramp_down")


def start_field(name, sheet):
    g = sheet.grid
    S, T = np.meshgrid(g.s_nodes, g.t_nodes, indexing="ij")
    ramp = (S * T)[..., None] * np.ones(g.d)
    table = {
        "zero": np.zeros(g.shape),
        "plus_half": np.full(g.shape, 0.5),
        "minus_half": np.full(g.shape, -0.5),
        # W-coupled ramps: the first sweep sees the deterministic field +-st instead of W
        "ramp_up": ramp - sheet.values,
        "ramp_down": -ramp - sheet.values,
    }
    try:
        return table[name]
    except KeyError:
        raise ParameterError(f"unknown start {name!r}; known: {sorted(table)}") from None


@dataclass
class UniquenessReport:
    seeds: tuple
    grids: tuple
    labels: list
    matrices: dict
    headline: np.ndarray
    scheme_gap: np.ndarray
    start_spread: np.ndarray
    failures: list
    decreasing: np.ndarray

    def table(self):
        rows = []
        for a, seed in enumerate(self.seeds):
            for b, n in enumerate(self.grids):
                rows.append({"seed": seed, "grid": n, "max_diff": float(self.headline[a, b]),
                             "scheme_gap": float(self.scheme_gap[a, b]),
                             "start_spread": float(self.start_spread[a, b])})
        return rows


def _pairwise_sup(fields):
    k = len(fields)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            if fields[i] is None or fields[j] is None:
                out[i, j] = out[j, i] = np.nan
            else:
                out[i, j] = out[j, i] = float(np.max(np.abs(fields[i] - fields[j])))
    return out


def uniqueness_for_sheet(drift, sheet, starts=DEFAULT_STARTS, schemes=("goursat_euler", "picard"), tol=1e-12,
                         max_iter=500, boundary=None):
    """Difference matrix for one path: both schemes for X, and the perturbation from every start."""
    labels, xs, us, failures = [], [], [], []
    for sch in schemes:
        try:
            if sch == "goursat_euler":
                xs.append(solve_goursat_euler(drift, sheet, boundary).values)
            elif sch == "picard":
                xs.append(solve_picard(drift, sheet, boundary, tol=tol, max_iter=max_iter).values)
            else:
                raise ParameterError(f"unknown scheme {sch!r}")
        except NonConvergenceError as exc:
            xs.append(None)
            failures.append({"what": sch, "error": str(exc)})
        labels.append(f"X[{sch}]")
    zero_label = "u[trivial]"
    us.append(np.zeros(sheet.grid.shape))
    ulabels = [zero_label]
    for name in starts:
        try:
            us.append(solve_perturbation(drift, sheet, None, start_field(name, sheet), tol, max_iter).values)
        except NonConvergenceError as exc:
            us.append(None)
            failures.append({"what": f"u[{name}]", "error": str(exc)})
        ulabels.append(f"u[{name}]")
    mx = _pairwise_sup(xs)
    mu = _pairwise_sup(us)
    return labels + ulabels, mx, mu, failures


def uniqueness_experiment(drift, seeds, grids=(128, 256, 512), starts=DEFAULT_STARTS,
                          schemes=("goursat_euler", "picard"), tol=1e-12, max_iter=500, d=None, workers=None):
    """Per seed and grid, sup-node differences between solutions; grids are nested views of one fine path."""
    grids = tuple(sorted(grids))
    fine = grids[-1]
    d = d or getattr(drift, "d", 1)
    for n in grids:
        if fine % n:
            raise ParameterError("grids must divide the finest grid")
    seeds = tuple(seeds)

    def one(chunk):
        out = []
        for seed in chunk:
            path = generate_sheet(GridSpec.square(fine, d), seed)
            per = []
            for n in grids:
                labels, mx, mu, fails = uniqueness_for_sheet(drift, path.coarsen(fine // n), starts, schemes, tol,
                                                             max_iter)
                per.append((labels, mx, mu, fails))
            out.append(per)
        return out

    results = [r for part in map_chunks(one, seeds, chunk=1, workers=workers) for r in part]
    headline = np.zeros((len(seeds), len(grids)))
    gap = np.zeros_like(headline)
    spread = np.zeros_like(headline)
    matrices, failures = {}, []
    labels = None
    for a, per in enumerate(results):
        for b, (labels, mx, mu, fails) in enumerate(per):
            gap[a, b] = np.nanmax(mx) if mx.size else 0.0
            spread[a, b] = np.nanmax(mu) if mu.size else 0.0
            headline[a, b] = max(gap[a, b], spread[a, b])
            matrices[(seeds[a], grids[b])] = (mx, mu)
            failures += [dict(f, seed=seeds[a], grid=grids[b]) for f in fails]
    # a seed whose solutions already coincide to round-off has nothing left to decrease
    exact = np.all(headline <= EXACT_TOL, axis=1)
    trend = np.all(np.diff(headline, axis=1) < 0, axis=1) if len(grids) > 1 else np.ones(len(seeds), bool)
    decreasing = trend | exact
    return UniquenessReport(seeds, grids, labels, matrices, headline, gap, spread, failures, decreasing)
