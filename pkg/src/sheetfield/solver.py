"""Grid solvers for X = xi + int int b(X) + W, the perturbation equation, and the pi/4 rotation."""
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import io as sio
from ._validation import as_vector, check_positive_int, check_real
from .errors import DivergenceError, NonConvergenceError, ParameterError
from .sheet import GridSpec, SheetPath, bilinear


# ---------------------------------------------------------------- boundary data

@dataclass(frozen=True)
class Constant:
    xi: object = 0.0

    def extension(self, grid):
        v = as_vector(self.xi, grid.d, "xi")
        return np.broadcast_to(v, grid.shape)

    def describe(self):
        return {"kind": "constant", "xi": np.atleast_1d(np.asarray(self.xi, float)).tolist()}


@dataclass(frozen=True)
class Axes:
    """Data on both axes: ``sigma(t)`` on s = 0 and ``tau(s)`` on t = 0."""

    sigma: Callable
    tau: Callable
    label: str = "axes"

    def _eval(self, f, u, d):
        v = np.asarray(f(np.asarray(u, dtype=float)), dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        return np.broadcast_to(v, (len(u), d))

    def extension(self, grid):
        d = grid.d
        sig = self._eval(self.sigma, grid.t_nodes, d)
        tau = self._eval(self.tau, grid.s_nodes, d)
        if np.max(np.abs(sig[0] - tau[0])) > 1e-12:
            raise ParameterError("boundary data must agree at the corner: sigma(0) != tau(0)")
        return sig[None, :, :] + tau[:, None, :] - sig[0]

    def describe(self):
        return {"kind": "axes", "label": self.label}


def as_boundary(b):
    if b is None:
        return Constant(0.0)
    if isinstance(b, (Constant, Axes)):
        return b
    return Constant(b)


# ---------------------------------------------------------------- fields

@dataclass(frozen=True, eq=False)
class SolutionField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)
    scheme: str
    iterations: int
    residual: float
    drift_id: str
    seed: int
    boundary: object = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ParameterError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at(self, s, t):
        return bilinear(self.values, self.grid, s, t)

    def metadata(self):
        return {"scheme": self.scheme, "iterations": self.iterations, "residual": self.residual,
                "drift_id": self.drift_id, "seed": self.seed, "grid": self.grid.as_dict(),
                "boundary": self.boundary.describe() if self.boundary is not None else None}


def save_field(path, fld):
    sio.write_grid_array(path, fld.grid, fld.values, fld.seed)
    sio.write_sidecar(path, fld.metadata())


def load_field(path):
    n_s, n_t, s_max, t_max, d, seed, values = sio.read_grid_array(path)
    meta = sio.read_sidecar(path)
    return SolutionField(GridSpec(n_s, n_t, s_max, t_max, d), values, meta["scheme"], meta["iterations"],
                         meta["residual"], meta["drift_id"], seed)


# ---------------------------------------------------------------- array kernels

def cum2d(cells):
    """Node array of rectangle sums: ``out[i, j] = sum of cells[:i, :j]`` (zero on the axes)."""
    c = np.asarray(cells)
    shape = c.shape[:-3] + (c.shape[-3] + 1, c.shape[-2] + 1, c.shape[-1])
    out = np.zeros(shape)
    out[..., 1:, 1:, :] = np.cumsum(np.cumsum(c, axis=-3), axis=-2)
    return out


def corner_mean(nodes):
    v = np.asarray(nodes)
    return 0.25 * (v[..., :-1, :-1, :] + v[..., 1:, :-1, :] + v[..., :-1, 1:, :] + v[..., 1:, 1:, :])


def cell_times(grid, where="left"):
    off = 0.5 if where == "mid" else 0.0
    s = (np.arange(grid.n_s) + off) * grid.ds
    t = (np.arange(grid.n_t) + off) * grid.dt
    return s[:, None], t[None, :]


def drift_cells(drift, grid, nodes, where):
    """``b`` times cell area on every cell, at the lower-left corner or the centre."""
    s, t = cell_times(grid, where)
    x = nodes[..., :-1, :-1, :] if where == "left" else corner_mean(nodes)
    return drift(s, t, x) * grid.cell_area


def _first_bad(a):
    idx = np.argwhere(~np.isfinite(a))
    return tuple(int(i) for i in idx[0]) if len(idx) else None


def euler_sweep(drift, grid, w, ext):
    """Left-corner Goursat sweep, vectorised along t and over leading batch axes."""
    w = np.asarray(w, dtype=float)
    x = np.array(np.broadcast_to(ext, w.shape), dtype=float) + w
    t = grid.t_nodes[:-1]
    acc = np.zeros(w.shape[:-3] + (grid.n_t + 1, grid.d))
    area = grid.cell_area
    for i in range(grid.n_s):
        f = drift(grid.s_nodes[i], t, x[..., i, :-1, :]) * area
        acc[..., 1:, :] += np.cumsum(f, axis=-2)
        row = x[..., i + 1, :, :] + acc
        if not np.all(np.isfinite(row)):
            bad = _first_bad(row)
            raise DivergenceError(f"non-finite value in row s-index {i + 1} at {bad}", location=(i + 1, bad))
        x[..., i + 1, :, :] = row
    return x


def picard_iterate(step, start, tol, max_iter):
    """Plain fixed-point iteration; returns ``(x, iterations, last_change)``."""
    x = start
    change = np.inf
    for k in range(1, max_iter + 1):
        new = step(x)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"non-finite iterate at iteration {k}", location=_first_bad(new))
        change = float(np.max(np.abs(new - x))) if new.size else 0.0
        x = new
        if change < tol:
            return x, k, change
    raise NonConvergenceError(f"no convergence after {max_iter} iterations (last change {change:.3g})",
                              last_iterate=x, change=change)


# ---------------------------------------------------------------- public solvers

def _check_pair(drift, sheet):
    if not isinstance(sheet, SheetPath):
        raise ParameterError("sheet must be a SheetPath")
    if getattr(drift, "d", sheet.grid.d) != sheet.grid.d:
        raise ParameterError(f"drift dimension {drift.d} does not match sheet d={sheet.grid.d}")


def solve_goursat_euler(drift, sheet, boundary=None):
    _check_pair(drift, sheet)
    boundary = as_boundary(boundary)
    g = sheet.grid
    ext = boundary.extension(g)
    x = euler_sweep(drift, g, sheet.values, ext)
    res = _defect(x, drift, g, sheet.values, ext, "left")
    return SolutionField(g, x, "goursat_euler", 1, res, _id(drift), sheet.seed, boundary)


def solve_picard(drift, sheet, boundary=None, tol=1e-10, max_iter=200, start=None):
    _check_pair(drift, sheet)
    tol = check_real(tol, "tol", lo=0.0, lo_open=True)
    max_iter = check_positive_int(max_iter, "max_iter")
    boundary = as_boundary(boundary)
    g = sheet.grid
    ext = boundary.extension(g)
    base = ext + sheet.values
    x0 = base.copy() if start is None else _start_array(start, g)

    def step(x):
        return base + cum2d(drift_cells(drift, g, x, "mid"))

    try:
        x, k, _ = picard_iterate(step, x0, tol, max_iter)
    except NonConvergenceError as exc:
        last = exc.last_iterate
        exc.last_iterate = SolutionField(g, last, "picard", max_iter, _defect(last, drift, g, sheet.values, ext, "mid"),
                                         _id(drift), sheet.seed, boundary)
        raise
    res = _defect(x, drift, g, sheet.values, ext, "mid")
    return SolutionField(g, x, "picard", k, res, _id(drift), sheet.seed, boundary)


def _start_array(start, grid):
    if isinstance(start, SolutionField):
        return np.array(start.values, dtype=float)
    a = np.asarray(start, dtype=float)
    if a.shape == grid.shape:
        return a.copy()
    if a.ndim <= 1:
        return np.array(np.broadcast_to(as_vector(a, grid.d, "start"), grid.shape))
    raise ParameterError(f"start has shape {a.shape}, expected {grid.shape}")


def perturbation_step(drift, grid, w, ext):
    wm = corner_mean(w)
    s, t = cell_times(grid, "mid")
    bw = drift(s, t, wm)
    area = grid.cell_area

    def step(u):
        return ext + cum2d((drift(s, t, wm + corner_mean(u)) - bw) * area)
    return step


def solve_perturbation(drift, sheet, u_boundary=None, start=None, tol=1e-10, max_iter=200):
    """Fixed point of ``u = u_ext + int int {b(W + u) - b(W)}`` (midpoint rule)."""
    _check_pair(drift, sheet)
    tol = check_real(tol, "tol", lo=0.0, lo_open=True)
    max_iter = check_positive_int(max_iter, "max_iter")
    boundary = as_boundary(u_boundary)
    g = sheet.grid
    ext = np.array(np.broadcast_to(boundary.extension(g), g.shape))
    u0 = ext.copy() if start is None else _start_array(start, g)
    step = perturbation_step(drift, g, sheet.values, ext)
    try:
        u, k, _ = picard_iterate(step, u0, tol, max_iter)
    except NonConvergenceError as exc:
        last = exc.last_iterate
        exc.last_iterate = SolutionField(g, last, "perturbation", max_iter, float(np.max(np.abs(step(last) - last))),
                                         _id(drift), sheet.seed, boundary)
        raise
    res = float(np.max(np.abs(step(u) - u)))
    return SolutionField(g, u, "perturbation", k, res, _id(drift), sheet.seed, boundary)


def _defect(x, drift, grid, w, ext, where):
    return float(np.max(np.abs(x - ext - cum2d(drift_cells(drift, grid, x, where)) - w)))


def residual(fld, drift, sheet, scheme=None):
    """Sup-node defect of the integral equation for the quadrature matching ``fld.scheme``."""
    scheme = scheme or fld.scheme
    g = sheet.grid
    if fld.grid != g:
        raise ParameterError("field and sheet live on different grids")
    boundary = fld.boundary if fld.boundary is not None else Constant(0.0)
    ext = boundary.extension(g)
    if scheme == "perturbation":
        step = perturbation_step(drift, g, sheet.values, ext)
        return float(np.max(np.abs(step(fld.values) - fld.values)))
    where = "left" if scheme == "goursat_euler" else "mid"
    return _defect(fld.values, drift, g, sheet.values, ext, where)


def _id(drift):
    return getattr(drift, "id", "custom")


# ---------------------------------------------------------------- rotation

_SQ2 = math.sqrt(2.0)


class WaveField:
    """``Y(rho, theta) = X((theta+rho)/sqrt2, (theta-rho)/sqrt2)`` on the triangle theta >= |rho|.

    Samples live on a square (rho, theta) lattice of step ``h``; lattice points
    whose preimage leaves the source domain hold NaN.
    """

    def __init__(self, source, h, rho, theta, values):
        self.source = source
        self.h = h
        self.rho = rho
        self.theta = theta
        self.values = values
        self.values.flags.writeable = False

    def _check(self, rho, theta):
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        s = (theta + rho) / _SQ2
        t = (theta - rho) / _SQ2
        g = self.source.grid
        tol = 1e-12
        if np.any(theta < np.abs(rho) - tol) or np.any(s > g.s_max + tol) or np.any(t > g.t_max + tol):
            raise ParameterError("query outside the rotated domain (need theta >= |rho| inside the square)")
        return rho, theta, s, t

    def exact(self, rho, theta):
        """Direct evaluation from the source field (one interpolation)."""
        _, _, s, t = self._check(rho, theta)
        g = self.source.grid
        return self.source.at(np.clip(s, 0, g.s_max), np.clip(t, 0, g.t_max))

    def at(self, rho, theta):
        """Bilinear interpolation in the rotated lattice."""
        rho, theta, _, _ = self._check(rho, theta)
        a = (rho - self.rho[0]) / self.h
        b = theta / self.h
        i = np.clip(np.floor(a + 1e-9).astype(int), 0, len(self.rho) - 2)
        j = np.clip(np.floor(b + 1e-9).astype(int), 0, len(self.theta) - 2)
        fa = np.clip(a - i, 0.0, 1.0)
        fb = np.clip(b - j, 0.0, 1.0)
        fa = np.where(fa < 1e-9, 0.0, np.where(fa > 1 - 1e-9, 1.0, fa))[..., None]
        fb = np.where(fb < 1e-9, 0.0, np.where(fb > 1 - 1e-9, 1.0, fb))[..., None]
        v = self.values
        out = 0.0
        for di, wa in ((0, 1 - fa), (1, fa)):
            for dj, wb in ((0, 1 - fb), (1, fb)):
                w = wa * wb
                with np.errstate(invalid="ignore"):
                    out = out + np.where(w == 0, 0.0, w * np.nan_to_num(v[i + di, j + dj], nan=np.inf))
        if not np.all(np.isfinite(out)):
            raise ParameterError("query touches lattice points outside the rotated domain")
        return out

    def boundary_plus(self, theta):
        """Data on the edge rho = theta, i.e. X(sqrt2 theta, 0)."""
        theta = np.asarray(theta, dtype=float)
        return self.source.at(_SQ2 * theta, np.zeros_like(theta))

    def boundary_minus(self, theta):
        """Data on the edge rho = -theta, i.e. X(0, sqrt2 theta)."""
        theta = np.asarray(theta, dtype=float)
        return self.source.at(np.zeros_like(theta), _SQ2 * theta)


def rotate_to_wave(fld, h=None):
    g = fld.grid
    h = min(g.ds, g.dt) / _SQ2 if h is None else check_real(h, "h", lo=0.0, lo_open=True)
    n_rho_hi = int(math.floor(g.s_max / _SQ2 / h + 1e-9))
    n_rho_lo = int(math.floor(g.t_max / _SQ2 / h + 1e-9))
    n_theta = int(math.floor((g.s_max + g.t_max) / _SQ2 / h + 1e-9))
    rho = np.arange(-n_rho_lo, n_rho_hi + 1) * h
    theta = np.arange(n_theta + 1) * h
    R, T = np.meshgrid(rho, theta, indexing="ij")
    s = (T + R) / _SQ2
    t = (T - R) / _SQ2
    tol = 1e-9 * max(g.ds, g.dt)
    inside = (s >= -tol) & (t >= -tol) & (s <= g.s_max + tol) & (t <= g.t_max + tol)
    vals = np.full(R.shape + (g.d,), np.nan)
    vals[inside] = fld.at(np.clip(s[inside], 0, g.s_max), np.clip(t[inside], 0, g.t_max))
    return WaveField(fld, h, rho, theta, vals)


def unrotate(wave, grid=None):
    """Node values of X recovered from the rotated lattice by interpolation."""
    g = grid or wave.source.grid
    S, T = np.meshgrid(g.s_nodes, g.t_nodes, indexing="ij")
    return wave.at((S - T) / _SQ2, (S + T) / _SQ2)


def interpolation_bound(fld):
    """Largest oscillation of the field over one grid cell (bilinear error bound)."""
    v = fld.values
    corners = np.stack([v[:-1, :-1], v[1:, :-1], v[:-1, 1:], v[1:, 1:]])
    return float(np.max(corners.max(axis=0) - corners.min(axis=0)))
