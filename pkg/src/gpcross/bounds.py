"""Log-scale bounds and two-term asymptotics for non-crossing probabilities.

All quantities here are plain arithmetic on three numbers produced by the
projection: the squared RKHS norm of the minimiser and the pairings of its
measure with the upper boundary ``u`` and a lower boundary ``u_-``.
Reference probabilities enter as log values supplied by the caller (a
Monte Carlo estimate, a closed form, or the conservative ``log 1 = 0``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, integrate_against


class CertificateError(ValueError):
    """Raised when a bound is requested without the conditions it needs."""


def theta(gamma_tilde, u):
    """Pairing of a non-negative atomic measure with the boundary."""
    if np.any(np.asarray(gamma_tilde.atoms) < -1e-9):
        raise ValueError("theta needs a non-negative measure")
    return integrate_against(gamma_tilde, u)


def upper_bound_log(norm_sq, theta_u, log_ref=0.0, certificates=None):
    """``log_ref - norm_sq / 2 + theta_u``.

    ``log_ref`` is ``log P_{f - f~, u}``; the default 0 uses ``P <= 1``.
    When a ConditionReport is passed, the measure must be non-negative and
    the drift pairing non-negative.
    """
    if certificates is not None and not (certificates.g1 and certificates.g2):
        raise CertificateError("upper bound needs a non-negative measure with non-negative drift pairing")
    return float(log_ref) - 0.5 * float(norm_sq) + float(theta_u)


def lower_bound_log(norm_sq, theta_u_minus, log_band, certificates=None, u=None, u_minus=None):
    """``log_band - norm_sq / 2 + theta_u_minus`` with ``log_band = log P_{0,u,u_-}``."""
    if certificates is not None and not certificates.g3:
        raise CertificateError("lower bound needs a dominating minimiser")
    if u is not None and u_minus is not None and np.any(
        np.where(u.grid.zero_mask, u_minus.values > u.values, u_minus.values >= u.values)
    ):
        raise ValueError("lower boundary must stay strictly below the upper boundary")
    if not np.isfinite(log_band):
        raise ValueError("band probability must be positive")
    return float(log_band) - 0.5 * float(norm_sq) + float(theta_u_minus)


def general_lower_bound_log(norm_sq, log_ref):
    """Lower bound that needs only the projection and ``log P_{f - f~, u}``.

    ``log_ref - norm_sq / 2 - sqrt(norm_sq) * sqrt(-2 log_ref)``.
    """
    log_ref = float(log_ref)
    if not np.isfinite(log_ref) or log_ref >= 0:
        raise ValueError("log_ref must lie in (-inf, 0)")
    return log_ref - 0.5 * norm_sq - math.sqrt(norm_sq) * math.sqrt(-2.0 * log_ref)


def asymptote(norm_sq, theta_u, c):
    return -0.5 * np.asarray(c, dtype=float) ** 2 * norm_sq + np.asarray(c, dtype=float) * theta_u


def asymptote_series(norm_sq, theta_u, c_values, log_p=None):
    """Two-term asymptote at each ``c``.

    With ``log_p`` (estimates of ``log P_{cf,u}``) also returns the
    normalised residuals ``(log_p - asymptote) / c``, which tend to 0.
    """
    if norm_sq < 0:
        raise ValueError("norm_sq must be non-negative")
    c = np.asarray(c_values, dtype=float)
    a = asymptote(norm_sq, theta_u, c)
    if log_p is None:
        return a
    return a, (np.asarray(log_p, dtype=float) - a) / c


def boundary_sequence(u, n):
    """Continuous boundaries increasing to ``u``: ``u - 1/n`` and negative on the zero set.

    Valid when ``u > 0`` on the zero set, which makes every band
    probability positive for models whose law has full support.
    """
    mask = u.grid.zero_mask
    if np.any(u.values[mask] <= 0):
        raise ValueError("the approximating sequence needs u > 0 on the zero set")
    v = u.values - 1.0 / n
    v = np.where(mask, np.minimum(v, -1.0 / n), v)
    return GridFunction(u.grid, v)


@dataclass
class BoundsReport:
    """Per-``c`` bounds for the drift ``c f``.

    Projecting ``c f`` gives ``c f~`` and ``c gamma~``, so everything is
    computed from the ``c = 1`` projection by rescaling.
    """

    norm_sq: float
    theta_u: float
    theta_u_minus: float = float("nan")
    c_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_ref: np.ndarray = None
    log_band: float = float("nan")
    mc_log_estimate: np.ndarray = None
    mc_ci_low: np.ndarray = None
    mc_ci_high: np.ndarray = None

    def __post_init__(self):
        self.c_values = np.asarray(self.c_values, dtype=float)
        if self.log_ref is None:
            self.log_ref = np.zeros_like(self.c_values)
        self.log_ref = np.broadcast_to(np.asarray(self.log_ref, dtype=float), self.c_values.shape).copy()

    def asymptote(self):
        return asymptote(self.norm_sq, self.theta_u, self.c_values)

    def log_upper(self):
        c = self.c_values
        return self.log_ref - 0.5 * c**2 * self.norm_sq + c * self.theta_u

    def log_lower(self):
        c = self.c_values
        if not np.isfinite(self.log_band) or not np.isfinite(self.theta_u_minus):
            return np.full_like(c, np.nan)
        return self.log_band - 0.5 * c**2 * self.norm_sq + c * self.theta_u_minus

    def log_general_lower(self):
        out = []
        for c, lr in zip(self.c_values, self.log_ref):
            if np.isfinite(lr) and lr < 0:
                out.append(general_lower_bound_log(c**2 * self.norm_sq, lr))
            else:
                out.append(np.nan)
        return np.array(out)

    def rows(self):
        cols = {
            "c": self.c_values,
            "asymptote": self.asymptote(),
            "upper": self.log_upper(),
            "lower": self.log_lower(),
            "general_lower": self.log_general_lower(),
        }
        n = self.c_values.size
        for name in ("mc_log_estimate", "mc_ci_low", "mc_ci_high"):
            v = getattr(self, name)
            cols[name] = np.full(n, np.nan) if v is None else np.asarray(v, dtype=float)
        return cols

    def to_dict(self):
        d = {k: [_json_float(x) for x in v] for k, v in self.rows().items()}
        d.update(
            norm_sq=self.norm_sq,
            theta_u=self.theta_u,
            theta_u_minus=_json_float(self.theta_u_minus),
            log_band=_json_float(self.log_band),
            log_ref=[_json_float(x) for x in self.log_ref],
        )
        return d

    def to_csv(self, path):
        cols = self.rows()
        names = list(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for i in range(self.c_values.size):
                w.writerow([_csv_float(cols[k][i]) for k in names])


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _csv_float(x):
    x = float(x)
    return format(x, ".14e") if math.isfinite(x) else ""
