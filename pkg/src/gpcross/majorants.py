"""Closed-form cone projections for the one-parameter Brownian models.

For Wiener-type processes the minimal-norm dominating drift is a concave
majorant of the sampled drift, computed here as an upper convex hull of
the node points. All functions are piecewise linear on the grid, so the
hull is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFunction, GridMeasure

# relative tolerance for discarding points that sit on a hull chord
HULL_RTOL = 1e-12
CONTACT_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class MajorantResult:
    """A majorant together with its slope profile and induced measure.

    ``left_derivative`` holds the left derivative at every node (right
    derivative at the left endpoint). ``norm_sq`` is the squared L2 norm of
    the derivative over the interval on which the majorant was built.
    """

    f: GridFunction
    majorant: GridFunction
    left_derivative: np.ndarray
    induced_measure: GridMeasure
    contact_set: np.ndarray
    norm_sq: float

    @property
    def grid(self):
        return self.majorant.grid

    def to_csv(self, path):
        if self.grid.ndim != 1:
            raise ValueError("CSV export is defined for 1-D majorants")
        cols = ["t", "f", "f_tilde", "left_derivative", "gamma_atom", "contact"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(
                self.grid.nodes,
                self.f.values,
                self.majorant.values,
                self.left_derivative,
                self.induced_measure.atoms,
                self.contact_set,
            ):
                w.writerow([format(float(x), ".17g") for x in row[:5]] + [int(row[5])])


def upper_hull(t, y, rtol=HULL_RTOL):
    """Indices of the upper convex hull vertices of points sorted by ``t``.

    Points within ``rtol * scale`` of a chord are dropped, which makes the
    hull of an already concave polygon reproduce the same vertex set.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    tol = rtol * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)
    hull = []
    for i in range(t.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            chord = y[a] + (y[i] - y[a]) * (t[b] - t[a]) / (t[i] - t[a])
            if y[b] - chord <= tol:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull, dtype=int)


def _polygon(t, y, vertices):
    """Evaluate the polygon through ``vertices``; vertex values are copied exactly."""
    vals = np.interp(t, t[vertices], y[vertices])
    vals[vertices] = y[vertices]
    return vals


def _slopes(t, vals):
    return np.diff(vals) / np.diff(t)


def _left_derivative(cell_slopes):
    return np.concatenate([cell_slopes[:1], cell_slopes])


def _hull_profile(t, y, vertices, terminal_atom):
    """Majorant values, cell slopes and slope-jump atoms for a vertex set.

    Atoms sit only on hull vertices: the downward jump of the slope there.
    With ``terminal_atom`` the last slope is also placed as an atom at the
    right endpoint (the majorant is read as flat beyond it).
    """
    vals = _polygon(t, y, vertices)
    seg = np.diff(y[vertices]) / np.diff(t[vertices])
    cell = np.empty(t.size - 1)
    for k in range(seg.size):
        cell[vertices[k] : vertices[k + 1]] = seg[k]
    atoms = np.zeros(t.size)
    for k in range(1, vertices.size - 1):
        atoms[vertices[k]] = seg[k - 1] - seg[k]
    if terminal_atom and seg.size:
        atoms[vertices[-1]] += seg[-1]
    return vals, cell, atoms


def _nondecreasing_profile(t, y):
    istar = int(np.argmax(y))  # earliest argmax
    vert = upper_hull(t[: istar + 1], y[: istar + 1])
    if istar < t.size - 1:
        vert = np.append(vert, t.size - 1)
        y = y.copy()
        y[istar + 1 :] = y[istar]
        # the flat piece is a single segment; interior nodes are not vertices
    vals, cell, atoms = _hull_profile(t, y, vert, terminal_atom=True)
    return vals, cell, atoms


def _contact(f_vals, m_vals):
    scale = max(1.0, float(np.max(np.abs(f_vals))))
    return np.abs(m_vals - f_vals) <= CONTACT_ATOL * scale


def _result(f, vals, cell, atoms, norm_sq=None):
    grid = f.grid
    atoms = np.where(grid.zero_mask, 0.0, atoms)
    if norm_sq is None:
        norm_sq = float(np.sum(cell**2 * np.diff(grid.nodes)))
    return MajorantResult(
        f=f,
        majorant=GridFunction(grid, vals),
        left_derivative=_left_derivative(cell),
        induced_measure=GridMeasure(grid, atoms),
        contact_set=_contact(f.values, vals),
        norm_sq=float(norm_sq),
    )


def _require_1d(f):
    if f.grid.ndim != 1:
        raise ValueError("majorants are defined on 1-D grids")


def lncm(f):
    """Least non-decreasing concave majorant of a piecewise-linear function.

    Upper hull up to the (earliest) maximiser, flat afterwards. The
    induced measure places the slope decrements on hull vertices and the
    final slope at the right endpoint, so that its tail mass
    ``gamma([t, b])`` equals the left derivative at ``t``.
    """
    _require_1d(f)
    t, y = f.grid.nodes, f.values
    vals, cell, atoms = _nondecreasing_profile(t, y)
    return _result(f, vals, cell, atoms)


def lcm(f, atol=1e-12):
    """Least concave majorant of a function vanishing at both endpoints (bridge case)."""
    _require_1d(f)
    y = f.values
    if abs(y[0]) > atol or abs(y[-1]) > atol:
        raise ValueError("the bridge majorant needs f = 0 at both endpoints")
    t = f.grid.nodes
    vert = upper_hull(t, y)
    vals, cell, atoms = _hull_profile(t, y, vert, terminal_atom=False)
    atoms[0] = atoms[-1] = 0.0
    return _result(f, vals, cell, atoms)


def glued_majorant(f, atol=1e-12):
    """Majorant on ``[a, b]`` with ``a < 0 < b`` for the two-sided Wiener process.

    Least non-increasing concave majorant on ``[a, 0]`` glued to the least
    non-decreasing concave majorant on ``[0, b]``. The two halves are
    independent and the squared norms add.
    """
    _require_1d(f)
    t, y = f.grid.nodes, f.values
    if not (t[0] < 0 < t[-1]):
        raise ValueError("glued majorant needs a < 0 < b")
    hits = np.flatnonzero(t == 0.0)
    if hits.size != 1:
        raise ValueError("0 must be a grid node")
    z = int(hits[0])
    if abs(y[z]) > atol:
        raise ValueError("drift must vanish at 0")
    rv, rcell, ratoms = _nondecreasing_profile(t[z:], y[z:])
    # mirror the left half onto [0, -a]
    lv, lcell, latoms = _nondecreasing_profile(-t[z::-1], y[z::-1])
    vals = np.concatenate([lv[::-1], rv[1:]])
    # slopes in the original orientation
    cell = np.concatenate([-lcell[::-1], rcell])
    atoms = np.concatenate([latoms[::-1], ratoms[1:]])
    atoms[z] = 0.0
    norm_sq = float(np.sum(cell**2 * np.diff(t)))
    return _result(f, vals, cell, atoms, norm_sq)


def extend_and_majorize(f):
    """Majorant for the Wiener process observed on ``[a, b]`` with ``a > 0``.

    The drift is continued linearly to ``[0, a]`` through the origin, the
    least non-decreasing concave majorant is taken on ``[0, b]`` and
    restricted back to ``[a, b]``. ``norm_sq`` is the full ``[0, b]``
    quantity, which is the RKHS norm of the restricted majorant.
    """
    _require_1d(f)
    t, y = f.grid.nodes, f.values
    a = t[0]
    if a <= 0:
        raise ValueError("extend_and_majorize needs a > 0")
    te = np.concatenate([[0.0], t])
    ye = np.concatenate([[0.0], y])
    vals, cell, atoms = _nondecreasing_profile(te, ye)
    norm_sq = float(np.sum(cell**2 * np.diff(te)))
    # left derivative at a is the slope of the [0, a] cell
    grid = f.grid
    return MajorantResult(
        f=f,
        majorant=GridFunction(grid, vals[1:]),
        left_derivative=cell.copy(),
        induced_measure=GridMeasure(grid, np.where(grid.zero_mask, 0.0, atoms[1:])),
        contact_set=_contact(y, vals[1:]),
        norm_sq=norm_sq,
    )


def monotone_rearrangement(values, widths=None):
    """Non-increasing rearrangement of a step function.

    Returns ``(values, widths)`` with the cells reordered by decreasing
    value (stable for ties). Equal widths are assumed when none are given.
    """
    d = np.asarray(values, dtype=float)
    w = np.ones_like(d) if widths is None else np.asarray(widths, dtype=float)
    if d.shape != w.shape:
        raise ValueError("values and widths must have the same length")
    if not np.all(np.isfinite(d)):
        raise ValueError("values must be finite")
    order = np.argsort(-d, kind="stable")
    return d[order], w[order]


def running_integral(values, widths):
    """Cumulative integral of a step function at the cell boundaries (starting at 0)."""
    return np.concatenate([[0.0], np.cumsum(np.asarray(values) * np.asarray(widths))])


def product_majorant(r1, r2, grid, f):
    """Tensor product of two 1-D majorants on a sheet grid."""
    if grid.shape != (r1.grid.nodes.size, r2.grid.nodes.size):
        raise ValueError("sheet grid does not match the factor grids")
    vals = np.outer(r1.majorant.values, r2.majorant.values)
    cell1 = r1.left_derivative[1:]
    cell2 = r2.left_derivative[1:]
    atoms = np.outer(r1.induced_measure.atoms, r2.induced_measure.atoms)
    atoms = np.where(grid.zero_mask, 0.0, atoms)
    return MajorantResult(
        f=f,
        majorant=GridFunction(grid, vals),
        left_derivative=np.outer(cell1, cell2),
        induced_measure=GridMeasure(grid, atoms),
        contact_set=_contact(f.values, vals),
        norm_sq=r1.norm_sq * r2.norm_sq,
    )


__all__ = [
    "Grid",
    "MajorantResult",
    "extend_and_majorize",
    "glued_majorant",
    "lcm",
    "lncm",
    "monotone_rearrangement",
    "product_majorant",
    "running_integral",
    "upper_hull",
]
