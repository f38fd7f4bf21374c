"""Closed-form probabilities and brute-force solvers used as independent checks."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.stats import norm


def wiener_sup_cdf(u, b=1.0):
    """``P(max_{[0,b]} W <= u) = 2 Phi(u / sqrt(b)) - 1`` for ``u >= 0``."""
    if u < 0:
        return 0.0
    return 2.0 * norm.cdf(u / math.sqrt(b)) - 1.0


def bridge_sup_cdf(u):
    """``P(max_{[0,1]} B <= u) = 1 - exp(-2 u^2)`` for a standard bridge, ``u >= 0``."""
    if u < 0:
        return 0.0
    return -math.expm1(-2.0 * u * u)


def wiener_band_images(upper, lower, b=1.0, tol=1e-15):
    """``P(lower <= W_t <= upper on [0, b])`` by the method of images.

    ``upper > 0 > lower`` constants; terms are summed until they fall
    below ``tol``.
    """
    if not (upper > 0 > lower):
        raise ValueError("need lower < 0 < upper")
    a, c = -lower, upper
    w = a + c
    s = math.sqrt(b)
    total = 0.0
    for k in itertools.count():
        ks = (0,) if k == 0 else (k, -k)
        term = 0.0
        for j in ks:
            term += (
                norm.cdf((c - 2 * j * w) / s)
                - norm.cdf((-a - 2 * j * w) / s)
                - norm.cdf((-c - 2 * j * w) / s)
                + norm.cdf((-a - 2 * c - 2 * j * w) / s)
            )
        total += term
        if k > 0 and abs(term) < tol:
            break
    return total


def wiener_band_eigen(half_width, b=1.0, tol=1e-15):
    """Symmetric band ``|W| <= h`` on ``[0, b]`` via the eigenfunction series."""
    h = float(half_width)
    total = 0.0
    for k in itertools.count():
        m = 2 * k + 1
        term = 4.0 / math.pi * (-1) ** k / m * math.exp(-(m * math.pi) ** 2 * b / (8.0 * h * h))
        total += term
        if abs(term) < tol:
            break
    return total


def enumerate_kkt(r, f, tol=1e-12):
    """Minimiser of ``1/2 x'Rx - f'x`` over ``x >= 0`` by trying every support set.

    For each subset ``S`` solve ``R_SS x_S = f_S`` and keep the point that
    satisfies ``x >= 0`` and ``Rx >= f``. Exponential; meant for a handful
    of variables.
    """
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    n = f.size
    scale = max(1.0, float(np.abs(f).max(initial=0.0)))
    found = []
    for k in range(n + 1):
        for s in itertools.combinations(range(n), k):
            x = np.zeros(n)
            if s:
                idx = list(s)
                x[idx] = np.linalg.solve(r[np.ix_(idx, idx)], f[idx])
            if x.min(initial=0.0) >= -tol * scale and (r @ x - f).min(initial=0.0) >= -tol * scale:
                found.append((s, x))
    if not found:
        raise RuntimeError("no KKT point found")
    return found
