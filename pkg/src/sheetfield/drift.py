"""Drifts b = b_hat - b_check with componentwise nondecreasing halves.

Evaluators take ``(s, t, x)`` with ``x`` of shape ``(..., d)`` and ``s, t``
broadcastable against ``x.shape[:-1]``; they return an array shaped like ``x``.
Jacobians are returned as ``(..., d, d)`` arrays with entry ``[j, k] = d b_j / d x_k``.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicHermiteSpline

from ._validation import check_positive_int, check_real
from .errors import ParameterError

QUAD_ORDER = 16


@dataclass(frozen=True)
class Bounded:
    bound: float

    @property
    def kind(self):
        return "bounded"


@dataclass(frozen=True)
class LinearGrowth:
    M: float

    @property
    def kind(self):
        return "linear"


def growth_constant(growth, d):
    """M with |b(x)| <= M (1 + |x|) implied by the declared growth mode."""
    if isinstance(growth, Bounded):
        return 2.0 * growth.bound * np.sqrt(d)
    return float(growth.M)


def _heaviside(x):
    # midpoint convention at the jump, matching sign(0) = 0
    return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))


@dataclass(frozen=True)
class Profile:
    """Nondecreasing scalar profile ``cont(x) + sum(size * H(x - loc))``.

    ``affine = (slope, intercept)`` marks profiles that mollification leaves unchanged.
    """

    cont: Optional[Callable] = None
    cont_deriv: Optional[Callable] = None
    jumps: tuple = ()
    affine: Optional[tuple] = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.affine is not None:
            out = self.affine[0] * x + self.affine[1]
        elif self.cont is not None:
            out = np.asarray(self.cont(x), dtype=float) + np.zeros_like(x)
        else:
            out = np.zeros_like(x)
        for loc, size in self.jumps:
            out = out + size * _heaviside(x - loc)
        return out

    def derivative(self, x):
        if self.jumps:
            raise ParameterError("profile with jumps has no derivative")
        x = np.asarray(x, dtype=float)
        if self.affine is not None:
            return np.full_like(x, self.affine[0])
        if self.cont_deriv is None:
            raise ParameterError("profile has no derivative")
        return np.asarray(self.cont_deriv(x), dtype=float) + np.zeros_like(x)


ZERO_PROFILE = Profile(affine=(0.0, 0.0))


def _separable(profiles):
    profiles = tuple(profiles)

    def f(s, t, x):
        x = np.asarray(x, dtype=float)
        if len(profiles) == 1:
            return profiles[0](x)
        return np.stack([p(x[..., j]) for j, p in enumerate(profiles)], axis=-1)
    return f


class MonotonePair:
    """A drift given by its two monotone halves.

    Separable, time-homogeneous drifts can pass ``hat_profiles`` and
    ``check_profiles`` (one :class:`Profile` per component); mollification is
    then done exactly per axis.  Otherwise ``b_hat``/``b_check`` are treated as
    black boxes and may depend on ``(s, t)``.
    """

    def __init__(self, b_hat=None, b_check=None, growth=Bounded(1.0), id="custom", d=1,
                 params=None, hat_profiles=None, check_profiles=None,
                 hat_jacobian=None, check_jacobian=None):
        self.d = check_positive_int(d, "d")
        self.growth = growth
        self.id = id
        self.params = dict(params or {})
        if hat_profiles is not None or check_profiles is not None:
            hp = tuple(hat_profiles or (ZERO_PROFILE,) * self.d)
            cp = tuple(check_profiles or (ZERO_PROFILE,) * self.d)
            if len(hp) != self.d or len(cp) != self.d:
                raise ParameterError("need one profile per component")
            self.profiles = (hp, cp)
            b_hat = b_hat or _separable(hp)
            b_check = b_check or _separable(cp)
        else:
            self.profiles = None
        if b_hat is None or b_check is None:
            raise ParameterError("both halves of the drift are required")
        self.b_hat = b_hat
        self.b_check = b_check
        self.hat_jacobian = hat_jacobian
        self.check_jacobian = check_jacobian

    def __repr__(self):
        return f"MonotonePair(id={self.id!r}, d={self.d}, growth={self.growth})"

    def hat(self, s, t, x):
        return np.asarray(self.b_hat(s, t, x), dtype=float) + np.zeros_like(x, dtype=float)

    def check(self, s, t, x):
        return np.asarray(self.b_check(s, t, x), dtype=float) + np.zeros_like(x, dtype=float)

    def __call__(self, s, t, x):
        return self.hat(s, t, x) - self.check(s, t, x)

    evaluate = __call__

    @property
    def is_zero(self):
        return self.id == "zero"

    def describe(self):
        return {"id": self.id, "d": self.d, "growth": _growth_dict(self.growth), "params": self.params}


def _growth_dict(g):
    if isinstance(g, Bounded):
        return {"mode": "bounded", "bound": g.bound}
    return {"mode": "linear", "M": g.M}


# ---------------------------------------------------------------- mollifier

def bump(u):
    """Unnormalised C-infinity bump exp(-1/(1-u^2)) supported on [-1, 1]."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def bump_derivative(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui**2)) * (-2.0 * ui / (1.0 - ui**2) ** 2)
    return out


@lru_cache(maxsize=None)
def _bump_cdf_table(panels=4096):
    # cumulative integral on [0, 1] by 8-point Gauss-Legendre per panel
    y, w = leggauss(8)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = edges[1] - edges[0]
    mids = 0.5 * (edges[:-1] + edges[1:])
    pts = mids[:, None] + 0.5 * h * y[None, :]
    mass = (bump(pts) * w).sum(axis=1) * 0.5 * h
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    total = 2.0 * cum[-1]
    cdf = 0.5 + cum / total
    cdf[-1] = 1.0
    spline = CubicHermiteSpline(edges, cdf, bump(edges) / total)
    return spline, total


def bump_mass():
    return _bump_cdf_table()[1]


def bump_cdf(u):
    """CDF of the normalised bump; exactly symmetric, Phi(0) = 1/2."""
    spline, _ = _bump_cdf_table()
    u = np.asarray(u, dtype=float)
    a = np.minimum(np.abs(u), 1.0)
    half = spline(a)
    return np.where(u >= 0, half, 1.0 - half)


def bump_density(u):
    return bump(u) / bump_mass()


@lru_cache(maxsize=None)
def _quad_rule(order=QUAD_ORDER):
    y, w = leggauss(order)
    kw = w * bump(y)
    return y, kw / kw.sum(), w * bump_derivative(y) / kw.sum()


def _mollify_profile(p, n):
    """Value and derivative callables of ``p`` convolved with the width-1/n bump."""
    if p.affine is not None and not p.jumps:
        return p, p.derivative
    y, kw, dkw = _quad_rule()
    shifts = y / n

    def cont_value(x):
        if p.affine is not None:
            return p.affine[0] * x + p.affine[1]
        if p.cont is None:
            return np.zeros_like(x)
        vals = np.asarray(p.cont(x[..., None] - shifts), dtype=float)
        return (vals * kw).sum(axis=-1) if vals.ndim else np.full_like(x, float(vals))

    def cont_deriv(x):
        if p.affine is not None:
            return np.full_like(x, p.affine[0])
        if p.cont is None:
            return np.zeros_like(x)
        if p.cont_deriv is not None:
            vals = np.asarray(p.cont_deriv(x[..., None] - shifts), dtype=float)
            return (vals * kw).sum(axis=-1) if vals.ndim else np.full_like(x, float(vals))
        vals = np.asarray(p.cont(x[..., None] - shifts), dtype=float)
        return -(vals * dkw).sum(axis=-1) * n if vals.ndim else np.zeros_like(x)

    def value(x):
        x = np.asarray(x, dtype=float)
        out = cont_value(x)
        for loc, size in p.jumps:
            out = out + size * bump_cdf(n * (x - loc))
        return out

    def deriv(x):
        x = np.asarray(x, dtype=float)
        out = cont_deriv(x)
        for loc, size in p.jumps:
            out = out + size * n * bump_density(n * (x - loc))
        return out

    return value, deriv


class SmoothedDrift:
    """The level-n mollification of a :class:`MonotonePair`."""

    def __init__(self, source, level):
        self.source = source
        self.level = check_positive_int(level, "level")
        self.kernel_width = 1.0 / self.level
        self.d = source.d
        self.growth = source.growth
        self.id = f"{source.id}@n{self.level}"
        if source.profiles is not None:
            hp, cp = source.profiles
            self._hat = [_mollify_profile(p, self.level) for p in hp]
            self._check = [_mollify_profile(p, self.level) for p in cp]
        else:
            self._hat = self._check = None
            self._nodes, self._weights, self._dweights = self._product_rule()

    def __repr__(self):
        return f"SmoothedDrift({self.source.id!r}, level={self.level})"

    def _product_rule(self):
        y, kw, dkw = _quad_rule()
        d = self.d
        grids = np.meshgrid(*([np.arange(len(y))] * d), indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=-1)
        nodes = y[idx]
        base = kw[idx]
        weights = base.prod(axis=-1)
        dweights = np.empty_like(nodes)
        for k in range(d):
            others = np.prod(np.delete(base, k, axis=-1), axis=-1) if d > 1 else 1.0
            dweights[:, k] = dkw[idx[:, k]] * others
        return nodes / self.level, weights, dweights

    def _generic(self, f, s, t, x):
        x = np.asarray(x, dtype=float)
        s = np.broadcast_to(np.asarray(s, float), x.shape[:-1])[..., None]
        t = np.broadcast_to(np.asarray(t, float), x.shape[:-1])[..., None]
        pts = x[..., None, :] - self._nodes
        vals = np.asarray(f(s, t, pts), dtype=float) + np.zeros_like(pts)
        return vals, pts, s, t

    def _apply(self, parts, generic_f, s, t, x):
        x = np.asarray(x, dtype=float)
        if parts is not None:
            if self.d == 1:
                return parts[0][0](x)
            return np.stack([parts[j][0](x[..., j]) for j in range(self.d)], axis=-1)
        vals, *_ = self._generic(generic_f, s, t, x)
        return np.einsum("...qj,q->...j", vals, self._weights)

    def _jacobian(self, parts, generic_f, generic_jac, s, t, x):
        x = np.asarray(x, dtype=float)
        d = self.d
        if parts is not None:
            diag = (parts[0][1](x) if d == 1 else
                    np.stack([parts[j][1](x[..., j]) for j in range(d)], axis=-1))
            jac = np.zeros(x.shape + (d,))
            idx = np.arange(d)
            jac[..., idx, idx] = diag
            return jac
        if generic_jac is not None:
            _, pts, ss, tt = self._generic(lambda *a: np.zeros(a[2].shape), s, t, x)
            vals = np.asarray(generic_jac(ss, tt, pts), dtype=float)
            return np.einsum("...qjk,q->...jk", vals, self._weights)
        vals, *_ = self._generic(generic_f, s, t, x)
        return -self.level * np.einsum("...qj,qk->...jk", vals, self._dweights)

    def hat(self, s, t, x):
        return self._apply(self._hat, self.source.b_hat, s, t, x)

    def check(self, s, t, x):
        return self._apply(self._check, self.source.b_check, s, t, x)

    def __call__(self, s, t, x):
        return self.hat(s, t, x) - self.check(s, t, x)

    evaluate = __call__

    def hat_jacobian(self, s, t, x):
        return self._jacobian(self._hat, self.source.b_hat, self.source.hat_jacobian, s, t, x)

    def check_jacobian(self, s, t, x):
        return self._jacobian(self._check, self.source.b_check, self.source.check_jacobian, s, t, x)

    def gradient(self, s, t, x):
        """Return ``(jac_hat - jac_check, jac_hat, jac_check)``."""
        jh = self.hat_jacobian(s, t, x)
        jc = self.check_jacobian(s, t, x)
        return jh - jc, jh, jc

    @property
    def is_zero(self):
        return self.source.is_zero

    def describe(self):
        out = self.source.describe()
        out["level"] = self.level
        return out


def mollify(pair, n):
    if isinstance(pair, SmoothedDrift):
        raise ParameterError("drift is already smoothed")
    return SmoothedDrift(pair, check_positive_int(n, "n"))


def evaluate(drift, s, t, x):
    return drift(s, t, x)


def gradient(drift, s, t, x):
    if not isinstance(drift, SmoothedDrift):
        raise ParameterError("gradients need a smoothed drift; call mollify first")
    return drift.gradient(s, t, x)


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    ok: bool
    n_pairs: int
    monotone_violations: int
    growth_violations: int
    bound_violations: int
    witnesses: list = field(default_factory=list)


def validate(pair, sample_count=10_000, seed=0, radius=4.0, max_witnesses=5):
    """Sampled check of monotonicity and growth of both halves."""
    sample_count = check_positive_int(sample_count, "sample_count")
    d = pair.d
    gen = np.random.default_rng(seed)
    probes_x = np.array([np.zeros(d), -np.ones(d), -0.5 * np.ones(d)])
    probes_y = np.array([np.ones(d), np.zeros(d), 0.5 * np.ones(d)])
    x = np.concatenate([probes_x, gen.uniform(-radius, radius, (sample_count, d))])
    offsets = gen.exponential(1.0, x[len(probes_x):].shape) * (gen.random(x[len(probes_x):].shape) < 0.8)
    y = np.concatenate([probes_y, x[len(probes_x):] + offsets])
    s = gen.random(len(x))
    t = gen.random(len(x))

    witnesses = []
    mono = 0
    for name, f in (("b_hat", pair.hat), ("b_check", pair.check)):
        fx, fy = f(s, t, x), f(s, t, y)
        tol = 1e-12 * (1.0 + np.abs(fx) + np.abs(fy))
        bad = np.any(fx > fy + tol, axis=-1)
        mono += int(bad.sum())
        for k in np.flatnonzero(bad)[:max_witnesses]:
            witnesses.append({"kind": "monotonicity", "half": name, "s": float(s[k]), "t": float(t[k]),
                              "x": x[k].tolist(), "y": y[k].tolist()})

    M = growth_constant(pair.growth, d)
    b = pair(s, t, x)
    lhs = np.linalg.norm(b, axis=-1)
    rhs = M * (1.0 + np.linalg.norm(x, axis=-1))
    bad = lhs > rhs * (1 + 1e-12)
    growth = int(bad.sum())
    for k in np.flatnonzero(bad)[:max_witnesses]:
        witnesses.append({"kind": "growth", "s": float(s[k]), "t": float(t[k]), "x": x[k].tolist(),
                          "norm_b": float(lhs[k]), "bound": float(rhs[k])})

    bound = 0
    if isinstance(pair.growth, Bounded):
        for name, f in (("b_hat", pair.hat), ("b_check", pair.check)):
            v = np.abs(f(s, t, x)).max(axis=-1)
            badb = v > pair.growth.bound * (1 + 1e-12)
            bound += int(badb.sum())
            for k in np.flatnonzero(badb)[:max_witnesses]:
                witnesses.append({"kind": "sup_bound", "half": name, "x": x[k].tolist(), "value": float(v[k])})

    return ValidationReport(mono == 0 and growth == 0 and bound == 0, len(x), mono, growth, bound, witnesses)


# ---------------------------------------------------------------- catalog

_CATALOG = {}


def register(id, factory, summary=""):
    """Register ``factory(d, **params) -> MonotonePair`` under ``id``."""
    _CATALOG[id] = (factory, summary)


def catalog():
    return {k: v[1] for k, v in sorted(_CATALOG.items())}


def make_drift(id, d=1, **params):
    try:
        factory, _ = _CATALOG[id]
    except KeyError:
        raise ParameterError(f"unknown drift id {id!r}; known: {sorted(_CATALOG)}") from None
    try:
        return factory(d, **params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for drift {id!r}: {exc}") from None


def _same(p, d):
    return (p,) * d


def _zero(d):
    return MonotonePair(growth=Bounded(0.0), id="zero", d=d,
                        hat_profiles=_same(ZERO_PROFILE, d), check_profiles=_same(ZERO_PROFILE, d))


def _constant(d, c=1.0):
    c = check_real(c, "c")
    return MonotonePair(growth=Bounded(abs(c)), id="constant", d=d, params={"c": c},
                        hat_profiles=_same(Profile(affine=(0.0, c)), d))


def _affine(d, slope=1.0, intercept=0.0):
    slope = check_real(slope, "slope", lo=0.0)
    intercept = check_real(intercept, "intercept")
    return MonotonePair(growth=LinearGrowth(max(slope, abs(intercept) * np.sqrt(d))), id="affine", d=d,
                        params={"slope": slope, "intercept": intercept},
                        hat_profiles=_same(Profile(affine=(slope, intercept)), d))


def _sign(d, M=1.0):
    M = check_real(M, "M", lo=0.0)
    prof = Profile(affine=(0.0, -M), jumps=((0.0, 2.0 * M),))
    return MonotonePair(lambda s, t, x: M * np.sign(x), None, Bounded(M), "sign", d, {"M": M},
                        hat_profiles=_same(prof, d))


def _step(d, theta=0.0, M=1.0):
    M = check_real(M, "M", lo=0.0)
    theta = check_real(theta, "theta")
    prof = Profile(affine=(0.0, 0.0), jumps=((theta, M),))
    return MonotonePair(growth=Bounded(M), id="step", d=d, params={"theta": theta, "M": M},
                        hat_profiles=_same(prof, d))


def _cubic(d, M=1.0):
    M = check_real(M, "M", lo=0.0)
    hat = Profile(affine=(1.0, 0.0))
    check = Profile(cont=lambda x: x**3, cont_deriv=lambda x: 3 * x**2)
    return MonotonePair(growth=LinearGrowth(M), id="cubic", d=d, params={"M": M},
                        hat_profiles=_same(hat, d), check_profiles=_same(check, d))


def _tanh(d, M=1.0):
    M = check_real(M, "M", lo=0.0)
    prof = Profile(cont=lambda x: M * np.tanh(x), cont_deriv=lambda x: M / np.cosh(x) ** 2)
    return MonotonePair(growth=Bounded(M), id="tanh", d=d, params={"M": M}, hat_profiles=_same(prof, d))


def _tanh_difference(d, M=1.0, k=2.0):
    M = check_real(M, "M", lo=0.0)
    k = check_real(k, "k", lo=0.0)
    hat = Profile(cont=lambda x: M * np.tanh(x), cont_deriv=lambda x: M / np.cosh(x) ** 2)
    check = Profile(cont=lambda x: M * np.tanh(k * x), cont_deriv=lambda x: M * k / np.cosh(k * x) ** 2)
    return MonotonePair(growth=Bounded(M), id="tanh_difference", d=d, params={"M": M, "k": k},
                        hat_profiles=_same(hat, d), check_profiles=_same(check, d))


def _clipped_linear(d, slope=0.5, M=1.0):
    slope = check_real(slope, "slope", lo=0.0)
    M = check_real(M, "M", lo=0.0)
    prof = Profile(cont=lambda x: np.clip(slope * x, -M, M),
                   cont_deriv=lambda x: np.where(np.abs(slope * x) < M, slope, 0.0))
    return MonotonePair(growth=Bounded(M), id="clipped_linear", d=d, params={"slope": slope, "M": M},
                        hat_profiles=_same(prof, d))


def _mean_tanh(d, M=1.0):
    M = check_real(M, "M", lo=0.0)

    def hat(s, t, x):
        m = np.mean(x, axis=-1, keepdims=True)
        return np.broadcast_to(M * np.tanh(m), np.shape(x)).copy()

    def jac(s, t, x):
        m = np.mean(x, axis=-1)
        g = M / np.cosh(m) ** 2 / x.shape[-1]
        return np.broadcast_to(g[..., None, None], x.shape + (x.shape[-1],)).copy()

    zero = lambda s, t, x: np.zeros(np.shape(x))
    zjac = lambda s, t, x: np.zeros(np.shape(x) + (np.shape(x)[-1],))
    return MonotonePair(hat, zero, Bounded(M), "mean_tanh", d, {"M": M},
                        hat_jacobian=jac, check_jacobian=zjac)


register("zero", _zero, "b = 0")
register("constant", _constant, "b = c (params: c)")
register("affine", _affine, "b = slope*x + intercept, slope >= 0, linear growth")
register("sign", _sign, "b = M*sign(x) componentwise, sign(0) = 0, bounded and discontinuous")
register("step", _step, "b = M*H(x - theta) componentwise, H(0) = 1/2")
register("cubic", _cubic, "b = x - x^3 split as b_hat = x, b_check = x^3 (violates linear growth)")
register("tanh", _tanh, "b = M*tanh(x) componentwise")
register("tanh_difference", _tanh_difference, "b = M*tanh(x) - M*tanh(k*x), not monotone overall")
register("clipped_linear", _clipped_linear, "b = clip(slope*x, -M, M), bounded and Lipschitz")
register("mean_tanh", _mean_tanh, "b_j = M*tanh(mean(x)) for every j, couples components")

BOUNDED_IDS = ("zero", "constant", "sign", "step", "tanh", "tanh_difference", "clipped_linear", "mean_tanh")
