"""Half-line Wiener problems mapped onto the Brownian bridge on ``[0, 1]``.

With ``t = s / (1 + s)`` and ``v(t) = 1 - t`` the process ``v(t) W(s)`` is
a Brownian bridge, and scaling drift and boundary by ``v`` leaves the
non-crossing event unchanged. The point ``t = 1`` stands for ``s = inf``;
the boundary there is the lower limit of ``v u`` at infinity, capped at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, grid_from_axes, uniform_axis
from .models import BrownianBridge, Wiener0b
from .simulation import MCEstimate, estimate_P

# tail values below this are read as a boundary running off to -inf
DIVERGENCE = -1e8


def to_unit(s):
    s = np.asarray(s, dtype=float)
    return s / (1.0 + s)


def to_halfline(t):
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1):
        raise ValueError("t = 1 has no finite preimage")
    return t / (1.0 - t)


@dataclass(frozen=True)
class TransformSpec:
    """Time change ``s -> s/(1+s)`` with scaling ``v(t) = 1 - t`` onto the bridge."""

    target_model: object = BrownianBridge()

    time_change = staticmethod(to_unit)
    inverse = staticmethod(to_halfline)

    @staticmethod
    def v(t):
        return 1.0 - np.asarray(t, dtype=float)

    def v_function(self, grid):
        return GridFunction(grid, self.v(grid.nodes))


@dataclass(frozen=True, eq=False)
class TransformResult:
    f_bar: GridFunction
    u_bar: GridFunction
    u_at_infinity: float
    tail_liminf: float
    zero_probability: bool
    negative_liminf: bool

    @property
    def grid(self):
        return self.u_bar.grid if self.u_bar is not None else None


def halfline_grid(n, horizon=None):
    """Graded nodes ``s_i = t_i / (1 - t_i)`` with ``t_i`` uniform.

    Without ``horizon`` the ``n`` uniform ``t`` nodes of ``[0, 1]`` are
    used minus the last one (which maps to infinity). With ``horizon``
    the ``t`` grid runs over ``[0, horizon / (1 + horizon)]`` and the last
    node is exactly ``horizon``.
    """
    if horizon is None:
        t = uniform_axis(0.0, 1.0, n)[:-1]
        s = to_halfline(t)
    else:
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        t = uniform_axis(0.0, horizon / (1.0 + horizon), n)
        s = to_halfline(t)
        s[-1] = horizon
    return grid_from_axes((s,), Wiener0b(b=float(s[-1])))


def _values(x, s):
    if callable(x):
        return np.asarray(x(s), dtype=float) * np.ones_like(s)
    v = np.asarray(getattr(x, "values", x), dtype=float)
    if v.shape != s.shape:
        raise ValueError("values do not match the half-line grid")
    return v


def _tail_liminf(x, s, tail):
    """Lower limit at infinity of ``v(t(s)) x(s)``.

    Callables are probed along ``t = 1 - 2^-k``; grid values use the
    minimum over the last ``tail`` nodes.
    """
    if callable(x):
        t = 1.0 - 2.0 ** -np.arange(20, 45)
        w = (1.0 - t) * np.asarray(x(to_halfline(t)), dtype=float)
    else:
        k = max(3, int(tail))
        w = (1.0 / (1.0 + s[-k:])) * _values(x, s)[-k:]
    if not np.all(np.isfinite(w)) or np.min(w) < DIVERGENCE:
        return -math.inf
    return float(np.min(w))


def halfline_to_bridge(f, u, s=None, tail=None):
    """Transform drift and boundary on the half-line into bridge coordinates.

    ``f`` and ``u`` are GridFunctions on a grid from :func:`halfline_grid`
    (no horizon), or callables of ``s`` together with the nodes ``s``.
    Returns values on the uniform ``t`` grid including ``t = 1``.
    """
    if s is None:
        grids = [x.grid for x in (f, u) if isinstance(x, GridFunction)]
        if not grids:
            raise ValueError("pass the half-line nodes when both inputs are callables")
        s = grids[0].nodes
    s = np.asarray(s, dtype=float)
    t = to_unit(s)
    t_full = np.append(t, 1.0)
    v = 1.0 - t
    fv, uv = _values(f, s), _values(u, s)
    if tail is None:
        tail = max(3, s.size // 50)
    lim = _tail_liminf(u, s, tail)
    u_inf = min(lim, 0.0)
    bridge = BrownianBridge()
    grid = grid_from_axes((t_full,), bridge)
    f_bar = GridFunction(grid, np.append(v * fv, 0.0))
    if not math.isfinite(u_inf):
        return TransformResult(f_bar, None, u_inf, lim, True, True)
    u_bar = GridFunction(grid, np.append(v * uv, u_inf))
    zero = bool(np.any(f_bar.values[grid.zero_mask] > u_bar.values[grid.zero_mask]))
    return TransformResult(f_bar, u_bar, u_inf, lim, zero, lim < 0)


def bridge_to_halfline(g, s):
    """Inverse map of a bridge-side GridFunction back to half-line values at ``s``."""
    s = np.asarray(s, dtype=float)
    t = to_unit(s)
    idx = np.searchsorted(g.grid.nodes, t)
    if np.any(idx >= g.grid.nodes.size) or not np.array_equal(g.grid.nodes[idx], t):
        raise ValueError("half-line nodes must map onto bridge nodes")
    return g.values[idx] / (1.0 - t)


@dataclass
class EquivalenceReport:
    halfline: object
    halfline_doubled: object
    bridge: object
    closed_form: float = float("nan")
    tol_se: float = 4.0

    @property
    def combined_se(self):
        return math.hypot(self.halfline.se, self.bridge.se)

    @property
    def agree(self):
        d = abs(self.halfline.p_hat - self.bridge.p_hat)
        return d <= self.tol_se * self.combined_se or d == 0.0

    @property
    def truncation_sensitive(self):
        se = max(self.halfline.se, 1.0 / self.halfline.replicates)
        return abs(self.halfline_doubled.p_hat - self.halfline.p_hat) > se

    @property
    def matches_closed_form(self):
        if not math.isfinite(self.closed_form):
            return None
        return abs(self.bridge.p_hat - self.closed_form) <= self.tol_se * max(self.bridge.se, 1e-12)

    def to_dict(self):
        return {
            "halfline": self.halfline.to_dict(),
            "halfline_doubled_horizon": self.halfline_doubled.to_dict(),
            "bridge": self.bridge.to_dict(),
            "closed_form": self.closed_form if math.isfinite(self.closed_form) else None,
            "combined_se": self.combined_se,
            "agree": self.agree,
            "truncation_sensitive": self.truncation_sensitive,
            "matches_closed_form": self.matches_closed_form,
        }


def probability_equivalence_check(f, u, replicates, seed, n=2001, horizon=1000.0, closed_form=None, threads=None):
    """MC estimates of the half-line event and of its bridge image.

    ``f`` and ``u`` are callables of ``s``. The half-line side runs on the
    graded grid truncated at ``horizon`` and again at ``2 * horizon`` with
    the same seed (so the two runs are coupled); the bridge side runs on the uniform ``n``-node grid of ``[0, 1]``.
    """
    grids = [halfline_grid(n, horizon), halfline_grid(n, 2.0 * horizon)]
    hl = []
    for g in grids:
        model = Wiener0b(b=float(g.nodes[-1]))
        s = g.nodes
        hl.append(
            estimate_P(
                model, g, GridFunction(g, _values(f, s)), GridFunction(g, _values(u, s)), replicates, seed, threads=threads
            )
        )
    full = halfline_grid(n)
    tr = halfline_to_bridge(f, u, s=full.nodes)
    bridge = BrownianBridge()
    if tr.zero_probability:
        b_est = MCEstimate(0, int(replicates), int(seed), "exact")
    else:
        bg = tr.grid
        b_est = estimate_P(bridge, bg, tr.f_bar, tr.u_bar, replicates, seed + 1, threads=threads)
    cf = float("nan") if closed_form is None else float(closed_form)
    return EquivalenceReport(hl[0], hl[1], b_est, cf)


__all__ = [
    "EquivalenceReport",
    "TransformResult",
    "TransformSpec",
    "bridge_to_halfline",
    "halfline_grid",
    "halfline_to_bridge",
    "probability_equivalence_check",
    "to_halfline",
    "to_unit",
]
