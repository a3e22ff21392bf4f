"""Brownian sheet sample paths on rectangular grids."""
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._validation import SNAP_TOL, check_positive_int, check_real, snap_index
from .errors import ParameterError


@dataclass(frozen=True)
class GridSpec:
    n_s: int
    n_t: int
    s_max: float = 1.0
    t_max: float = 1.0
    d: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_s", check_positive_int(self.n_s, "n_s"))
        object.__setattr__(self, "n_t", check_positive_int(self.n_t, "n_t"))
        object.__setattr__(self, "d", check_positive_int(self.d, "d"))
        object.__setattr__(self, "s_max", check_real(self.s_max, "s_max", 0.0, 1.0, lo_open=True))
        object.__setattr__(self, "t_max", check_real(self.t_max, "t_max", 0.0, 1.0, lo_open=True))

    @classmethod
    def square(cls, n, d=1):
        return cls(n, n, 1.0, 1.0, d)

    @property
    def ds(self):
        return self.s_max / self.n_s

    @property
    def dt(self):
        return self.t_max / self.n_t

    @property
    def cell_area(self):
        return self.ds * self.dt

    @property
    def shape(self):
        return (self.n_s + 1, self.n_t + 1, self.d)

    @property
    def s_nodes(self):
        return np.arange(self.n_s + 1) * self.ds

    @property
    def t_nodes(self):
        return np.arange(self.n_t + 1) * self.dt

    def s_index(self, s):
        return snap_index(s, self.ds, self.n_s, "s")

    def t_index(self, t):
        return snap_index(t, self.dt, self.n_t, "t")

    def with_d(self, d):
        return GridSpec(self.n_s, self.n_t, self.s_max, self.t_max, d)

    def as_dict(self):
        return {"n_s": self.n_s, "n_t": self.n_t, "s_max": self.s_max, "t_max": self.t_max, "d": self.d}


@dataclass(frozen=True)
class Rect:
    s_lo: float
    s_hi: float
    t_lo: float
    t_hi: float

    def __post_init__(self):
        if not (self.s_lo <= self.s_hi and self.t_lo <= self.t_hi):
            raise ParameterError(f"rectangle corners out of order: {self}")

    def indices(self, grid):
        return (grid.s_index(self.s_lo), grid.s_index(self.s_hi),
                grid.t_index(self.t_lo), grid.t_index(self.t_hi))

    @property
    def area(self):
        return (self.s_hi - self.s_lo) * (self.t_hi - self.t_lo)


@dataclass(frozen=True, eq=False)
class SheetPath:
    """Node values ``W[i, j, c]`` of one sample path; immutable after construction."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ParameterError(f"values have shape {v.shape}, grid expects {self.grid.shape}")
        if np.any(v[0] != 0.0) or np.any(v[:, 0] != 0.0):
            raise ParameterError("a sheet path must vanish on both axes")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at(self, s, t):
        """Bilinear interpolation off the nodes (error of order sqrt(cell side))."""
        return bilinear(self.values, self.grid, s, t)

    def increments(self):
        return cell_increments_of(self.values)

    def coarsen(self, factor):
        """The same path seen on a grid ``factor`` times coarser in both directions."""
        factor = check_positive_int(factor, "factor")
        g = self.grid
        if g.n_s % factor or g.n_t % factor:
            raise ParameterError(f"grid {g.n_s}x{g.n_t} is not divisible by {factor}")
        coarse = GridSpec(g.n_s // factor, g.n_t // factor, g.s_max, g.t_max, g.d)
        return SheetPath(coarse, self.values[::factor, ::factor], self.seed)


def cell_increments_of(values):
    """Four-corner rectangle increments of every grid cell (works with batch axes)."""
    v = np.asarray(values)
    return v[..., 1:, 1:, :] - v[..., :-1, 1:, :] - v[..., 1:, :-1, :] + v[..., :-1, :-1, :]


def cell_increments(grid, seed):
    """I.i.d. N(0, ds*dt) increments; cell (i, j), component c uses stream slot (i*n_t+j)*d+c."""
    z = rng.normals(seed, 0, grid.n_s * grid.n_t * grid.d)
    return z.reshape(grid.n_s, grid.n_t, grid.d) * np.sqrt(grid.cell_area)


def cell_increment_at(grid, seed, i, j, c=0):
    """Random access to a single cell increment without generating the rest."""
    pos = (np.asarray(i) * grid.n_t + np.asarray(j)) * grid.d + np.asarray(c)
    return rng.normals_at(seed, pos) * np.sqrt(grid.cell_area)


def prefix_sum(increments):
    inc = np.asarray(increments, dtype=np.float64)
    shape = inc.shape[:-3] + (inc.shape[-3] + 1, inc.shape[-2] + 1, inc.shape[-1])
    out = np.zeros(shape)
    out[..., 1:, 1:, :] = np.cumsum(np.cumsum(inc, axis=-3), axis=-2)
    return out


def sheet_values(grid, seeds):
    """Stacked node values for several seeds, shape ``(len(seeds), n_s+1, n_t+1, d)``."""
    seeds = list(seeds)
    inc = np.empty((len(seeds), grid.n_s, grid.n_t, grid.d))
    for k, seed in enumerate(seeds):
        inc[k] = cell_increments(grid, seed)
    return prefix_sum(inc)


def generate_sheet(grid, seed):
    if not isinstance(grid, GridSpec):
        raise ParameterError("grid must be a GridSpec")
    return SheetPath(grid, prefix_sum(cell_increments(grid, seed)), int(seed))


def rect_increment(path, rect):
    i0, i1, j0, j1 = rect.indices(path.grid)
    w = path.values
    return w[i1, j1] - w[i0, j1] - w[i1, j0] + w[i0, j0]


def rescale(path, a_s, a_t, eps_s, eps_t):
    """Rectangle increments of ``path`` anchored at ``(a_s, a_t)`` and stretched to the unit square.

    Node ``(s, t)`` of the result holds the increment of ``path`` over
    ``[a_s, a_s + eps_s*s] x [a_t, a_t + eps_t*t]``.
    """
    g = path.grid
    eps_s = check_real(eps_s, "eps_s", lo=0.0)
    eps_t = check_real(eps_t, "eps_t", lo=0.0)
    i0, i1 = g.s_index(a_s), g.s_index(a_s + eps_s)
    j0, j1 = g.t_index(a_t), g.t_index(a_t + eps_t)
    if i1 == i0 or j1 == j0:
        ks, kt = max(i1 - i0, 1), max(j1 - j0, 1)
        return SheetPath(GridSpec(ks, kt, 1.0, 1.0, g.d), np.zeros((ks + 1, kt + 1, g.d)), path.seed)
    # difference rows first, then columns, so both new axes are exactly zero
    rows = path.values[i0:i1 + 1, j0:j1 + 1] - path.values[i0, j0:j1 + 1]
    block = rows - rows[:, :1]
    return SheetPath(GridSpec(i1 - i0, j1 - j0, 1.0, 1.0, g.d), block, path.seed)


def reverse_bridge(w_component, dt):
    """Time-reversed sheet with its drift correction removed.

    ``w_component`` has shape ``(..., n_s+1, n_t+1)`` on a grid reaching t = 1.
    Returns ``B`` on the reversed nodes ``u = 0, dt, ..., 1-dt`` (the last
    node is dropped because of the 1/(1-u) factor), shape ``(..., n_s+1, n_t)``.
    """
    w = np.asarray(w_component, dtype=np.float64)
    n_t = w.shape[-1] - 1
    v = w[..., ::-1][..., :n_t]
    u = np.arange(n_t) * dt
    g = v / (1.0 - u)
    integral = np.zeros_like(v)
    integral[..., 1:] = np.cumsum(0.5 * (g[..., 1:] + g[..., :-1]) * dt, axis=-1)
    return v - v[..., :1] + integral


def dalang_walsh(path, component=0):
    """Fresh sheet hidden in the time reversal of one component.

    ``B[s, t] = W[s, 1-t] - W[s, 1] + int_0^t W[s, 1-u] / (1-u) du`` on
    ``t <= 1 - dt``, with the integral done by the trapezoid rule.
    """
    g = path.grid
    if abs(g.t_max - 1.0) > SNAP_TOL:
        raise ParameterError("time reversal needs t_max = 1")
    if not 0 <= component < g.d:
        raise ParameterError(f"component {component} out of range for d={g.d}")
    if g.n_t < 2:
        raise ParameterError("time reversal needs at least two cells in t")
    b = reverse_bridge(path.values[..., component], g.dt)
    out = GridSpec(g.n_s, g.n_t - 1, g.s_max, 1.0 - g.dt, 1)
    return SheetPath(out, b[..., None], path.seed)


def bilinear(values, grid, s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < -SNAP_TOL) or np.any(s > grid.s_max * (1 + SNAP_TOL)) \
            or np.any(t < -SNAP_TOL) or np.any(t > grid.t_max * (1 + SNAP_TOL)):
        raise ParameterError("query point outside the grid domain")
    x = np.clip(s / grid.ds, 0, grid.n_s)
    y = np.clip(t / grid.dt, 0, grid.n_t)
    i = np.minimum(np.floor(x).astype(int), grid.n_s - 1)
    j = np.minimum(np.floor(y).astype(int), grid.n_t - 1)
    fx = (x - i)[..., None]
    fy = (y - j)[..., None]
    v = np.asarray(values)
    return ((1 - fx) * (1 - fy) * v[i, j] + fx * (1 - fy) * v[i + 1, j]
            + (1 - fx) * fy * v[i, j + 1] + fx * fy * v[i + 1, j + 1])
