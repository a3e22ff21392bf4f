"""Reference computations written independently of the package code paths."""
import math
from statistics import NormalDist

import numpy as np
from scipy.integrate import quad
from scipy.special import i0, roots_jacobi
from numpy.polynomial.legendre import leggauss


def sheet_covariance(p, q):
    return min(p[0], q[0]) * min(p[1], q[1])


def bessel_series(z, terms=40):
    """sum_m z^m / (m!)^2, the zero-noise value of X = 1 + int int X at st = z."""
    return math.fsum(z**m / math.factorial(m) ** 2 for m in range(terms))


def philox_normals(seed, stream, count):
    """Sequential Philox stream, 53-bit uniforms, stdlib inverse normal CDF."""
    raw = np.random.Philox(key=[seed, stream]).random_raw(count)
    nd = NormalDist()
    return np.array([nd.inv_cdf(((int(r) >> 11) + 0.5) / 2.0**53) for r in raw])


def euler_loop(b, noise, h, xi=0.0):
    """Left-corner recursion on the unit square, one node at a time.

    ``noise`` holds cell increments (n x n); ``b`` maps a scalar to a scalar.
    """
    n = noise.shape[0]
    x = [[xi] * (n + 1) for _ in range(n + 1)]
    w = [[0.0] * (n + 1) for _ in range(n + 1)]
    for i in range(n):
        for j in range(n):
            w[i + 1][j + 1] = w[i + 1][j] + w[i][j + 1] - w[i][j] + noise[i][j]
    for i in range(n + 1):
        x[i][0] = xi
        x[0][i] = xi
    for i in range(n):
        for j in range(n):
            x[i + 1][j + 1] = (x[i + 1][j] + x[i][j + 1] - x[i][j] + b(x[i][j]) * h * h + noise[i][j])
    return np.array(x)


def bump_cdf_quad(u):
    f = lambda v: math.exp(-1.0 / (1.0 - v * v)) if abs(v) < 1 else 0.0
    total = quad(f, -1, 1, epsabs=1e-14)[0]
    if u <= -1:
        return 0.0
    if u >= 1:
        return 1.0
    return quad(f, -1, u, epsabs=1e-14)[0] / total


def mollified_sign_quad(x, n, M=1.0):
    """M * (2 Phi(n x) - 1) by direct quadrature of the normalised bump."""
    return M * (2.0 * bump_cdf_quad(n * x) - 1.0)


def sobolev_linear(beta, S=1.0, T=1.0, lam=1.0, nt=48, nr=32, nq=24):
    """Fractional Sobolev double integral of g(r, u) = I0(2 sqrt(lam (S-r)(T-u))) over [0,S]x[0,T].

    ``int int |g(p) - g(q)|^2 / |p - q|_1^(2 + 2 beta) dp dq`` in L1-polar
    coordinates v = q - p = rho w(tau) on the unit diamond, dv = rho drho dtau,
    with Gauss-Jacobi in rho absorbing the rho^(1 - 2 beta) singularity.
    """
    g = lambda a, b: i0(2.0 * np.sqrt(np.maximum(lam * (S - a) * (T - b), 0.0)))
    xq, wq = leggauss(nq)
    xt, wt = leggauss(nt)
    xr, wr = roots_jacobi(nr, 0.0, 1.0 - 2.0 * beta)

    def overlap_integral(v1, v2):
        lo1, hi1 = max(0.0, -v1), min(S, S - v1)
        lo2, hi2 = max(0.0, -v2), min(T, T - v2)
        if hi1 <= lo1 or hi2 <= lo2:
            return 0.0
        p1 = 0.5 * (hi1 + lo1) + 0.5 * (hi1 - lo1) * xq
        p2 = 0.5 * (hi2 + lo2) + 0.5 * (hi2 - lo2) * xq
        P1, P2 = np.meshgrid(p1, p2, indexing="ij")
        diff = g(P1 + v1, P2 + v2) - g(P1, P2)
        return float(wq @ (diff**2) @ wq) * 0.25 * (hi1 - lo1) * (hi2 - lo2)

    total = 0.0
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            # split tau where the reach of the ray switches sides
            for a, b in ((0.0, 0.5), (0.5, 1.0)):
                for xk, wk in zip(xt, wt):
                    tau = 0.5 * (a + b) + 0.5 * (b - a) * xk
                    w1, w2 = s1 * (1.0 - tau), s2 * tau
                    R = 1.0 / max(abs(w1) / S, abs(w2) / T)
                    inner = 0.0
                    for xj, wj in zip(xr, wr):
                        rho = 0.5 * R * (1.0 + xj)
                        inner += wj * overlap_integral(rho * w1, rho * w2) / rho**2
                    total += 0.5 * (b - a) * wk * (0.5 * R) ** (2.0 - 2.0 * beta) * inner
    return total
