"""Grids, sampled functions and atomic measures.

Everything downstream works on a finite set of nodes. Functions are read
piecewise linearly between nodes and measures are purely atomic on nodes,
so pairings between them are finite sums.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid of one or two strictly increasing axes.

    ``zero_mask`` has the grid shape and marks the nodes where the process
    variance vanishes.
    """

    axes: tuple
    zero_mask: np.ndarray

    def __post_init__(self):
        axes = tuple(_frozen(a) for a in self.axes)
        if len(axes) not in (1, 2):
            raise ValueError("grids have one or two axes")
        for a in axes:
            if a.ndim != 1 or a.size < 2:
                raise ValueError("each axis needs at least 2 nodes")
            if not np.all(np.isfinite(a)) or np.any(np.diff(a) <= 0):
                raise ValueError("axis nodes must be finite and strictly increasing")
        mask = np.array(self.zero_mask, dtype=bool)
        shape = tuple(a.size for a in axes)
        if mask.shape != shape:
            raise ValueError(f"zero_mask shape {mask.shape} != grid shape {shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "zero_mask", mask)

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def nodes(self):
        """Node coordinates of a 1-D grid (the single axis)."""
        if self.ndim != 1:
            raise ValueError("nodes is only defined for 1-D grids; use axes")
        return self.axes[0]

    @property
    def bounds(self):
        return tuple((a[0], a[-1]) for a in self.axes)

    def points(self):
        """All nodes as an ``(size, ndim)`` array in C order."""
        if self.ndim == 1:
            return self.axes[0][:, None].copy()
        t1, t2 = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([t1.ravel(), t2.ravel()])

    def widths(self, axis=0):
        return np.diff(self.axes[axis])

    def index_of(self, t, axis=0):
        """Index of node ``t`` on ``axis`` (exact match up to 1e-12)."""
        a = self.axes[axis]
        i = int(np.argmin(np.abs(a - t)))
        if abs(a[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"{t} is not a grid node")
        return i

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Grid) or self.shape != other.shape:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes)) and np.array_equal(
            self.zero_mask, other.zero_mask
        )

    def __hash__(self):
        return hash((self.shape, tuple(a.tobytes() for a in self.axes)))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a real function at the nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape == (self.grid.size,) and self.grid.ndim == 2:
            v = v.reshape(self.grid.shape)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid, func):
        if grid.ndim == 1:
            return cls(grid, np.asarray(func(grid.nodes), dtype=float) * np.ones(grid.shape))
        t1, t2 = np.meshgrid(*grid.axes, indexing="ij")
        return cls(grid, np.asarray(func(t1, t2), dtype=float) * np.ones(grid.shape))

    def with_values(self, values):
        return GridFunction(self.grid, values)

    def vanishes_on_zero_set(self, atol=0.0):
        return bool(np.all(np.abs(self.values[self.grid.zero_mask]) <= atol))

    def __add__(self, other):
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Finite signed measure made of atoms sitting on grid nodes."""

    grid: Grid
    atoms: np.ndarray

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float)
        if a.shape == (self.grid.size,) and self.grid.ndim == 2:
            a = a.reshape(self.grid.shape)
        if a.shape != self.grid.shape:
            raise ValueError(f"atoms shape {a.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("atoms must be finite")
        if np.any(a[self.grid.zero_mask] != 0.0):
            raise ValueError("measures carry no mass on the zero set")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def dirac(cls, grid, t, mass=1.0):
        a = np.zeros(grid.shape)
        if grid.ndim == 1:
            a[grid.index_of(t)] = mass
        else:
            a[grid.index_of(t[0], 0), grid.index_of(t[1], 1)] = mass
        return cls(grid, a)

    @property
    def total_variation(self):
        return float(np.abs(self.atoms).sum())

    @property
    def total_mass(self):
        return float(self.atoms.sum())

    def __mul__(self, c):
        return GridMeasure(self.grid, self.atoms * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return GridMeasure(self.grid, -self.atoms)


def _check_same_grid(g1, g2):
    if g1 != g2:
        raise ValueError("objects live on different grids")


def uniform_axis(lo, hi, n):
    """``n`` equispaced nodes on ``[lo, hi]`` with both endpoints exact.

    Refining from ``n`` to ``2n - 1`` nodes reproduces the coarse nodes
    bit for bit.
    """
    n = int(n)
    if n < 2:
        raise ValueError("need at least 2 nodes per axis")
    lo, hi = float(lo), float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
        raise ValueError(f"degenerate interval [{lo}, {hi}]")
    x = lo + (hi - lo) * (np.arange(n) / (n - 1))
    x[-1] = hi
    return x


def make_grid(bounds, n, model):
    """Uniform grid on an interval ``(lo, hi)`` or a rectangle ``((lo, hi), (lo, hi))``.

    The zero set is filled from the model, i.e. the nodes where the
    kernel diagonal vanishes.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape == (2,):
        axes = (uniform_axis(bounds[0], bounds[1], n),)
    elif bounds.shape == (2, 2):
        axes = tuple(uniform_axis(lo, hi, n) for lo, hi in bounds)
    else:
        raise ValueError("bounds must be (lo, hi) or ((lo, hi), (lo, hi))")
    return grid_from_axes(axes, model)


def grid_from_axes(axes, model):
    """Grid on arbitrary (e.g. graded) axes with the model's zero set."""
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    if len(axes) != model.ndim:
        raise ValueError(f"{model.name} needs {model.ndim}-D grids")
    model.check_domain(axes)
    return Grid(axes, model.zero_mask(axes))


def integrate_against(mu, g):
    """Pairing of an atomic measure with a grid function: sum of atom * value."""
    _check_same_grid(mu.grid, g.grid)
    return float(np.sum(mu.atoms * g.values))


def interp_eval(g, t):
    """Piecewise-(bi)linear interpolation of ``g`` at ``t``."""
    grid = g.grid
    if grid.ndim == 1:
        a = grid.nodes
        t = float(t)
        if t < a[0] or t > a[-1]:
            raise ValueError(f"t={t} outside [{a[0]}, {a[-1]}]")
        return float(np.interp(t, a, g.values))
    t1, t2 = map(float, t)
    a1, a2 = grid.axes
    if not (a1[0] <= t1 <= a1[-1] and a2[0] <= t2 <= a2[-1]):
        raise ValueError(f"point {t} outside the rectangle")
    i = min(max(np.searchsorted(a1, t1, side="right") - 1, 0), a1.size - 2)
    j = min(max(np.searchsorted(a2, t2, side="right") - 1, 0), a2.size - 2)
    x = (t1 - a1[i]) / (a1[i + 1] - a1[i])
    y = (t2 - a2[j]) / (a2[j + 1] - a2[j])
    v = g.values
    return float(
        (1 - x) * (1 - y) * v[i, j] + x * (1 - y) * v[i + 1, j] + (1 - x) * y * v[i, j + 1] + x * y * v[i + 1, j + 1]
    )


def resample(g, grid):
    """Interpolate ``g`` onto the nodes of another grid covering the same domain."""
    if grid.ndim == 1:
        if grid.nodes[0] < g.grid.nodes[0] - 1e-12 or grid.nodes[-1] > g.grid.nodes[-1] + 1e-12:
            raise ValueError("target grid leaves the source domain")
        return GridFunction(grid, np.interp(grid.nodes, g.grid.nodes, g.values))
    pts = grid.points()
    return GridFunction(grid, np.array([interp_eval(g, p) for p in pts]).reshape(grid.shape))


# -- CSV round trip ----------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def write_csv(obj, path):
    """Write a GridFunction or GridMeasure as ``t,value`` (or ``t1,t2,value``) rows."""
    values = obj.values if isinstance(obj, GridFunction) else obj.atoms
    grid = obj.grid
    header = ["t", "value"] if grid.ndim == 1 else ["t1", "t2", "value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p, v in zip(grid.points(), values.ravel()):
            w.writerow([_fmt(x) for x in p] + [_fmt(v)])


def read_csv_columns(path):
    """Return ``(coords, values)`` from a 2- or 3-column CSV with a header row."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    if data.shape[1] not in (2, 3):
        raise ValueError(f"{path}: expected 2 or 3 columns, got {data.shape[1]}")
    return data[:, :-1], data[:, -1]


def read_csv(path, model, kind="function"):
    """Rebuild a GridFunction (or GridMeasure) written by :func:`write_csv`."""
    coords, values = read_csv_columns(path)
    if coords.shape[1] == 1:
        axes = (coords[:, 0],)
    else:
        axes = (np.unique(coords[:, 0]), np.unique(coords[:, 1]))
        if axes[0].size * axes[1].size != values.size:
            raise ValueError(f"{path}: rows do not form a tensor grid")
        values = values.reshape(axes[0].size, axes[1].size)
    grid = grid_from_axes(axes, model)
    if kind == "measure":
        return GridMeasure(grid, values)
    return GridFunction(grid, values)
