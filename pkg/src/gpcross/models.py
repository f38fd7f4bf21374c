"""Covariance structures of the concrete Gaussian processes.

Each model knows its kernel, its zero set, the derivative-type
representation that carries its RKHS norm, and how to draw exact sample
paths on a grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import majorants
from .grid import GridFunction, GridMeasure, _check_same_grid, grid_from_axes, make_grid


class ProcessModel:
    """Base class; subclasses are immutable value objects."""

    name = "model"
    ndim = 1

    # -- domain ---------------------------------------------------------
    @property
    def domain(self):
        raise NotImplementedError

    def check_domain(self, axes):
        for a, (lo, hi) in zip(axes, self._domain_axes()):
            if a[0] < lo - 1e-12 or a[-1] > hi + 1e-12:
                raise ValueError(f"{self.name}: nodes outside [{lo}, {hi}]")

    def _domain_axes(self):
        d = self.domain
        return (d,) if self.ndim == 1 else d

    def grid(self, n):
        """Uniform grid with ``n`` nodes per axis over the whole domain."""
        return make_grid(self.domain, n, self)

    # -- kernel ---------------------------------------------------------
    def kernel(self, s, t):
        raise NotImplementedError

    def zero_mask(self, axes):
        if self.ndim == 1:
            a = np.asarray(axes[0])
            return self.kernel(a, a) == 0.0
        t1, t2 = np.meshgrid(*axes, indexing="ij")
        p = np.stack([t1, t2], axis=-1)
        return self.kernel(p, p) == 0.0

    def kernel_matrix(self, grid):
        p = grid.points()
        if self.ndim == 1:
            x = p[:, 0]
            return self.kernel(x[:, None], x[None, :])
        return self.kernel(p[:, None, :], p[None, :, :])

    def apply(self, grid, atoms):
        return (self.kernel_matrix(grid) @ np.ravel(atoms)).reshape(grid.shape)

    # -- RKHS -----------------------------------------------------------
    def representation(self, values, grid):
        """``(h, w)`` with ``||f||^2 = sum(h**2 * w)``; ``h`` is a cell derivative."""
        t = grid.nodes
        return np.diff(values) / np.diff(t), np.diff(t)

    # -- simulation -----------------------------------------------------
    def sample(self, grid, rng, size):
        """``size`` exact sample paths on the grid, shape ``(size, *grid.shape)``."""
        raise NotImplementedError

    def cell_variance(self, grid):
        """Local bridge variance per cell for Markov models, else ``None``.

        Given the node values, the path inside a cell is then a Brownian
        bridge with this variance parameter.
        """
        return None

    # -- closed-form cone projection ------------------------------------
    def majorant(self, f):
        """Closed-form minimiser when the model has one, else ``None``."""
        return None

    def __repr__(self):
        return f"{type(self).__name__}({self._params_repr()})"

    def _params_repr(self):
        return ""

    def to_dict(self):
        raise NotImplementedError


def _brownian_paths(times, rng, size):
    """Brownian motion at increasing ``times >= 0`` started from 0 at time 0."""
    times = np.asarray(times, dtype=float)
    sd = np.sqrt(np.diff(np.concatenate([[0.0], times])))
    out = np.empty((size, times.size))
    rng.standard_normal(out=out)
    out *= sd
    np.cumsum(out, axis=1, out=out)
    return out


@dataclass(frozen=True, repr=False)
class Wiener0b(ProcessModel):
    """Standard Wiener process on ``[0, b]``; zero set ``{0}``."""

    b: float = 1.0
    name = "wiener"

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")

    @property
    def domain(self):
        return (0.0, float(self.b))

    def kernel(self, s, t):
        s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(t < 0) or np.any(s > self.b + 1e-12) or np.any(t > self.b + 1e-12):
            raise ValueError("points outside [0, b]")
        return np.minimum(s, t)

    def sample(self, grid, rng, size):
        return _brownian_paths(grid.nodes, rng, size)

    def cell_variance(self, grid):
        return np.diff(grid.nodes)

    def majorant(self, f):
        if f.grid.nodes[0] != 0.0:
            return None
        return majorants.lncm(f)

    def _params_repr(self):
        return f"b={self.b}"

    def to_dict(self):
        return {"kind": "wiener", "b": float(self.b)}


@dataclass(frozen=True, repr=False)
class WienerAb(ProcessModel):
    """Wiener process observed on ``[a, b]`` with ``0 < a < b``; empty zero set."""

    a: float = 1.0
    b: float = 2.0
    name = "wiener_ab"

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError("WienerAb needs 0 < a < b")

    @property
    def domain(self):
        return (float(self.a), float(self.b))

    def kernel(self, s, t):
        s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        lo, hi = self.a - 1e-12, self.b + 1e-12
        if np.any(s < lo) or np.any(t < lo) or np.any(s > hi) or np.any(t > hi):
            raise ValueError("points outside [a, b]")
        return np.minimum(s, t)

    def representation(self, values, grid):
        t = grid.nodes
        h = np.concatenate([[values[0] / t[0]], np.diff(values) / np.diff(t)])
        return h, np.concatenate([[t[0]], np.diff(t)])

    def sample(self, grid, rng, size):
        return _brownian_paths(grid.nodes, rng, size)

    def cell_variance(self, grid):
        return np.diff(grid.nodes)

    def majorant(self, f):
        return majorants.extend_and_majorize(f)

    def _params_repr(self):
        return f"a={self.a}, b={self.b}"

    def to_dict(self):
        return {"kind": "wiener_ab", "a": float(self.a), "b": float(self.b)}


@dataclass(frozen=True, repr=False)
class WienerAb0(ProcessModel):
    """Two-sided Wiener process on ``[a, b]`` with ``a < 0 < b``; zero set ``{0}``."""

    a: float = -1.0
    b: float = 1.0
    name = "wiener_ab0"

    def __post_init__(self):
        if not self.a < 0 < self.b:
            raise ValueError("WienerAb0 needs a < 0 < b")

    @property
    def domain(self):
        return (float(self.a), float(self.b))

    def kernel(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        lo, hi = self.a - 1e-12, self.b + 1e-12
        if np.any(s < lo) or np.any(t < lo) or np.any(s > hi) or np.any(t > hi):
            raise ValueError("points outside [a, b]")
        same = s * t > 0
        return np.where(same, np.minimum(np.abs(s), np.abs(t)), 0.0)

    def sample(self, grid, rng, size):
        t = grid.nodes
        out = np.zeros((size, t.size))
        right = t >= 0
        left = t <= 0
        out[:, right] = _brownian_paths(t[right], rng, size)
        out[:, left] = _brownian_paths(-t[left][::-1], rng, size)[:, ::-1]
        return out

    def cell_variance(self, grid):
        # the two halves are only glued at a node
        if not np.any(grid.nodes == 0.0):
            return None
        return np.diff(grid.nodes)

    def majorant(self, f):
        return majorants.glued_majorant(f)

    def _params_repr(self):
        return f"a={self.a}, b={self.b}"

    def to_dict(self):
        return {"kind": "wiener_ab0", "a": float(self.a), "b": float(self.b)}


@dataclass(frozen=True, repr=False)
class BrownianBridge(ProcessModel):
    """Brownian bridge ``W_t - t W_1`` on ``[0, 1]``; zero set ``{0, 1}``."""

    name = "bridge"

    @property
    def domain(self):
        return (0.0, 1.0)

    def kernel(self, s, t):
        s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(t < 0) or np.any(s > 1) or np.any(t > 1):
            raise ValueError("points outside [0, 1]")
        return np.minimum(s, t) - s * t

    def sample(self, grid, rng, size):
        t = grid.nodes
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("bridge paths are sampled on grids spanning [0, 1]")
        w = _brownian_paths(t, rng, size)
        w -= np.multiply.outer(w[:, -1], t)
        return w

    def cell_variance(self, grid):
        return np.diff(grid.nodes)

    def majorant(self, f):
        return majorants.lcm(f)

    def to_dict(self):
        return {"kind": "bridge"}


@dataclass(frozen=True, repr=False)
class BrownianSheet(ProcessModel):
    """Brownian sheet on ``[0, T]^2``; zero set is the two axes."""

    T: float = 1.0
    name = "sheet"
    ndim = 2

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def domain(self):
        return ((0.0, float(self.T)), (0.0, float(self.T)))

    def kernel(self, s, t):
        s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(t < 0) or np.any(s > self.T + 1e-12) or np.any(t > self.T + 1e-12):
            raise ValueError("points outside [0, T]^2")
        return np.minimum(s[..., 0], t[..., 0]) * np.minimum(s[..., 1], t[..., 1])

    def kernel_matrix(self, grid):
        r1, r2 = (np.minimum.outer(a, a) for a in grid.axes)
        return np.kron(r1, r2)

    def apply(self, grid, atoms):
        r1, r2 = (np.minimum.outer(a, a) for a in grid.axes)
        return r1 @ np.asarray(atoms).reshape(grid.shape) @ r2.T

    def representation(self, values, grid):
        v = np.asarray(values).reshape(grid.shape)
        d1, d2 = (np.diff(a) for a in grid.axes)
        mixed = np.diff(np.diff(v, axis=0), axis=1)
        w = np.outer(d1, d2)
        return (mixed / w).ravel(), w.ravel()

    def sample(self, grid, rng, size):
        a1, a2 = grid.axes
        if a1[0] != 0.0 or a2[0] != 0.0:
            raise ValueError("sheet paths are sampled on grids starting at the axes")
        w = np.outer(np.diff(a1), np.diff(a2))
        out = np.zeros((size, a1.size, a2.size))
        z = rng.standard_normal((size, a1.size - 1, a2.size - 1))
        z *= np.sqrt(w)
        out[:, 1:, 1:] = z
        np.cumsum(out, axis=1, out=out)
        np.cumsum(out, axis=2, out=out)
        return out

    def _params_repr(self):
        return f"T={self.T}"

    def to_dict(self):
        return {"kind": "sheet", "T": float(self.T)}


@dataclass(frozen=True, eq=False, repr=False)
class Volterra(ProcessModel):
    """Volterra process ``X_t = int_0^t K(t, s) dW_s`` from a kernel table.

    ``table[i, j] = K(nodes[i], nodes[j])`` for ``j <= i``. Integrals in
    ``s`` use the cell average of ``K(t, .)`` (trapezoid rule per cell),
    which makes the discrete covariance factor exactly as ``K D K^T``.
    """

    nodes: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 33))
    table: np.ndarray = None
    name = "volterra"

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("Volterra nodes must start at 0 and increase strictly")
        if self.table is None:
            raise ValueError("kernel table missing")
        k = np.array(self.table, dtype=float)
        if k.shape != (t.size, t.size):
            raise ValueError("kernel table incomplete: expected one value per (t, s) node pair")
        low = np.tril(np.ones_like(k, dtype=bool))
        if not np.all(np.isfinite(k[low])):
            raise ValueError("kernel table incomplete: missing entries with s <= t")
        k = np.where(low, k, 0.0)
        for a in (t, k):
            a.setflags(write=False)
        object.__setattr__(self, "nodes", t)
        object.__setattr__(self, "table", k)
        kbar = self.cell_kernel()
        r = (kbar * np.diff(t)) @ kbar.T
        r.setflags(write=False)
        object.__setattr__(self, "_R", r)

    @classmethod
    def from_callable(cls, kernel, nodes):
        t = np.asarray(nodes, dtype=float)
        tt, ss = np.meshgrid(t, t, indexing="ij")
        k = np.where(ss <= tt, kernel(tt, ss) * np.ones_like(tt), 0.0)
        return cls(nodes=t, table=k)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh)][1:]
        data = np.array([[float(x) for x in r] for r in rows if r])
        nodes = np.unique(np.concatenate([data[:, 0], data[:, 1]]))
        idx = {v: i for i, v in enumerate(nodes)}
        k = np.full((nodes.size, nodes.size), np.nan)
        for t, s, v in data:
            k[idx[t], idx[s]] = v
        return cls(nodes=nodes, table=k)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "s", "K"])
            for i, t in enumerate(self.nodes):
                for j in range(i + 1):
                    w.writerow([format(x, ".17g") for x in (t, self.nodes[j], self.table[i, j])])

    @property
    def domain(self):
        return (0.0, float(self.nodes[-1]))

    def check_domain(self, axes):
        if axes[0].shape != self.nodes.shape or not np.allclose(axes[0], self.nodes, rtol=0, atol=1e-12):
            raise ValueError("kernel table does not cover the grid")

    def cell_kernel(self):
        """``Kbar[i, k]``: average of ``K(t_i, .)`` over cell ``k`` (zero for ``k >= i``)."""
        k = self.table
        kbar = 0.5 * (k[:, :-1] + k[:, 1:])
        i, j = np.indices(kbar.shape)
        return np.where(j < i, kbar, 0.0)

    def _matrix(self):
        return self._R

    def _index(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.nodes, x)
        idx = np.clip(idx, 0, self.nodes.size - 1)
        if not np.allclose(self.nodes[idx], x, rtol=0, atol=1e-12):
            raise ValueError("Volterra kernel is only tabulated at its nodes")
        return idx

    def kernel(self, s, t):
        i, j = self._index(s), self._index(t)
        return self._matrix()[i, j]

    def zero_mask(self, axes):
        return np.diag(self._matrix()) == 0.0

    def kernel_matrix(self, grid):
        return self._matrix()

    def representation(self, values, grid):
        """Solve the lower-triangular system ``K h = f`` cell by cell."""
        kbar = self.cell_kernel()
        d = np.diff(self.nodes)
        a = kbar[1:, :] * d  # rows: nodes 1..n-1, cols: cells
        diag = np.diag(a)
        if np.any(diag == 0.0):
            raise ValueError("degenerate Volterra kernel: K(t, s) vanishes next to the diagonal")
        from scipy.linalg import solve_triangular

        h = solve_triangular(a, np.asarray(values, dtype=float)[1:], lower=True)
        return h, d

    def sample(self, grid, rng, size):
        r = self._matrix()
        free = ~self.zero_mask((self.nodes,))
        try:
            chol = np.linalg.cholesky(r[np.ix_(free, free)])
        except np.linalg.LinAlgError as exc:
            raise ValueError("Cholesky factorisation of the Volterra covariance failed") from exc
        out = np.zeros((size, self.nodes.size))
        out[:, free] = rng.standard_normal((size, int(free.sum()))) @ chol.T
        return out

    def to_dict(self):
        return {"kind": "volterra", "nodes": self.nodes.size}

    def _params_repr(self):
        return f"n={self.nodes.size}"


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RkhsElement:
    """Element of the Cameron-Martin space with its derivative representation."""

    function: GridFunction
    representation: np.ndarray
    weights: np.ndarray

    @property
    def norm_sq(self):
        return float(np.sum(self.representation**2 * self.weights))

    @property
    def norm(self):
        return float(np.sqrt(self.norm_sq))


def rkhs_element(model, f, atol=1e-12):
    if not f.vanishes_on_zero_set(atol * max(1.0, float(np.max(np.abs(f.values))))):
        raise ValueError("function is not zero on the zero set of the process")
    h, w = model.representation(f.values, f.grid)
    return RkhsElement(f, np.asarray(h), np.asarray(w))


def kernel_eval(model, s, t):
    """Covariance ``R(s, t)`` at two points."""
    return float(model.kernel(np.asarray(s, dtype=float), np.asarray(t, dtype=float)))


def apply_R(model, mu):
    """Covariance operator on an atomic measure: ``(R mu)(t_i) = sum_j R(t_i, t_j) mu_j``."""
    grid = mu.grid
    vals = model.apply(grid, mu.atoms)
    vals = np.where(grid.zero_mask, 0.0, vals)
    return GridFunction(grid, vals)


def rkhs_inner(model, f, g):
    if not isinstance(f, RkhsElement):
        f = rkhs_element(model, f)
    if not isinstance(g, RkhsElement):
        g = rkhs_element(model, g)
    _check_same_grid(f.function.grid, g.function.grid)
    return float(np.sum(f.representation * g.representation * f.weights))


def rkhs_norm_sq(model, f):
    return rkhs_element(model, f).norm_sq


def is_positive_semidefinite(model, grid, rtol=1e-10):
    """Pivoted Cholesky (LAPACK ``pstrf``) succeeds up to rank deficiency."""
    from scipy.linalg import lapack

    r = np.array(model.kernel_matrix(grid), dtype=float)
    if not np.allclose(r, r.T, rtol=0, atol=1e-12 * max(1.0, np.abs(r).max())):
        return False
    _, _, rank, info = lapack.dpstrf(r, lower=1, tol=-1.0)
    if info < 0:
        return False
    w = np.linalg.eigvalsh(r)
    return bool(w.min() >= -rtol * max(1.0, w.max()))


def product_drift_solution(f1, f2, model):
    """Minimiser for a product drift ``f1(t1) f2(t2)`` on the Brownian sheet.

    Both factors must be non-negative and vanish at 0. The solution is the
    product of the two 1-D least non-decreasing concave majorants, its
    squared norm is the product of the factor norms and its measure is the
    product measure.
    """
    if not isinstance(model, BrownianSheet):
        raise TypeError("product_drift_solution needs a BrownianSheet model")
    for f in (f1, f2):
        if np.any(f.values < 0):
            raise ValueError("product drift factors must be non-negative")
        if f.values[0] != 0.0:
            raise ValueError("product drift factors must vanish at 0")
    r1, r2 = majorants.lncm(f1), majorants.lncm(f2)
    grid = grid_from_axes((f1.grid.nodes, f2.grid.nodes), model)
    f = GridFunction(grid, np.outer(f1.values, f2.values))
    return majorants.product_majorant(r1, r2, grid, f)


def volterra_apply(model, direction, x):
    """Apply the Volterra factor or its adjoint.

    ``forward``: ``x`` is a GridFunction (averaged onto cells by the
    trapezoid rule) or an array of cell values; returns the GridFunction
    ``t -> int_0^t K(t, s) x(s) ds``.

    ``adjoint``: ``x`` is a GridMeasure; returns the cell values of
    ``s -> int_s^T K(t, s) mu(dt)`` as an array (one value per cell).
    """
    if not isinstance(model, Volterra):
        raise TypeError("volterra_apply needs a Volterra model")
    kbar = model.cell_kernel()
    d = np.diff(model.nodes)
    grid = make_grid(model.domain, model.nodes.size, model)
    if direction == "forward":
        if isinstance(x, GridFunction):
            cells = 0.5 * (x.values[:-1] + x.values[1:])
        else:
            cells = np.asarray(x, dtype=float)
        if cells.shape != d.shape:
            raise ValueError("forward input must have one value per cell")
        return GridFunction(grid, kbar @ (cells * d))
    if direction == "adjoint":
        if not isinstance(x, GridMeasure):
            raise TypeError("adjoint input must be a GridMeasure")
        return kbar.T @ x.atoms
    raise ValueError("direction must be 'forward' or 'adjoint'")


def model_from_dict(spec, base_dir=None):
    """Build a model from its scenario description."""
    from pathlib import Path

    kind = spec["kind"]
    if kind == "wiener":
        return Wiener0b(b=float(spec.get("b", 1.0)))
    if kind == "wiener_ab":
        return WienerAb(a=float(spec["a"]), b=float(spec["b"]))
    if kind == "wiener_ab0":
        return WienerAb0(a=float(spec["a"]), b=float(spec["b"]))
    if kind == "bridge":
        return BrownianBridge()
    if kind == "sheet":
        return BrownianSheet(T=float(spec.get("T", 1.0)))
    if kind == "volterra":
        path = Path(spec["kernel_csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return Volterra.from_csv(path)
    raise ValueError(f"unknown model kind {kind!r}")
