"""Independent reference implementations used only by the tests.

None of these share code with the package: the t distribution is integrated
numerically in high precision, the probe objective is minimized by a
zooming grid search, and gradients are checked by central differences.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np


def t_cdf_quadrature(x: float, df: float, dps: int = 30) -> float:
    """Student-t CDF by direct quadrature of the density."""
    with mp.workdps(dps):
        nu = mp.mpf(df)
        x = mp.mpf(x)
        c = mp.gamma((nu + 1) / 2) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / 2))

        def pdf(u):
            return c * (1 + u * u / nu) ** (-(nu + 1) / 2)

        if x <= 0:
            return float(mp.quad(pdf, [-mp.inf, x]))
        return float(mp.mpf("0.5") + mp.quad(pdf, [0, x]))


def cauchy_cdf(x: float) -> float:
    return 0.5 + math.atan(x) / math.pi


def probe_objective(w, b, X, y, lam):
    """The regularized mean NLL evaluated for a batch of parameter vectors.

    ``w`` has shape (k, d) and ``b`` shape (k,); returns k losses.
    """
    Z = X @ w.T + b[None, :]
    nll = np.mean(np.logaddexp(0.0, Z) - y[:, None] * Z, axis=0)
    return nll + 0.5 * lam / X.shape[0] * np.sum(w * w, axis=1)


def grid_minimize(X, y, lam, half_width=20.0, points=11, shrink=0.7, tol=1e-8):
    """Minimize the probe objective over (w, b) by repeated grid refinement.

    A cube of ``points`` per axis is centred on the incumbent; each round the
    cube shrinks by ``shrink``. The objective is convex so the minimizer
    stays inside the cube once it is bracketed.
    """
    d = X.shape[1]
    centre = np.zeros(d + 1)
    h = half_width
    offsets = np.linspace(-1.0, 1.0, points)
    mesh = np.stack(np.meshgrid(*([offsets] * (d + 1)), indexing="ij"), -1).reshape(-1, d + 1)
    while h > tol:
        cand = centre + h * mesh
        vals = probe_objective(cand[:, :d], cand[:, d], X, y, lam)
        centre = cand[int(np.argmin(vals))]
        h *= shrink
    return centre[:d], float(centre[d])


def central_difference(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g
