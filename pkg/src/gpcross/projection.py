"""Projection of zero onto the cone ``{h in H : h >= f}`` on a grid.

By the representer theorem the minimiser over the whole Cameron-Martin
space subject to node constraints is ``R gamma`` for an atomic measure
``gamma`` on the non-degenerate nodes. Writing ``h = R gamma`` turns the
problem into the bound-constrained quadratic program

    minimise  1/2 gamma' R gamma - f' gamma   subject to  gamma >= 0,

whose optimality conditions are exactly ``R gamma >= f``, ``gamma >= 0``
and complementary slackness. The solution ``gamma`` is the measure
representing the minimiser, so the non-negativity certificate is read off
the iterate directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .grid import GridFunction, GridMeasure
from .models import apply_R, rkhs_inner

log = logging.getLogger(__name__)

G1_TOL = 1e-9
G3_TOL = 1e-9
ORTH_RTOL = 1e-8
SLACK_TOL = 1e-8
COND_LIMIT = 1e12


class ProjectionError(RuntimeError):
    """Solver failure; carries the best iterate and its residuals."""

    def __init__(self, message, best=None, residuals=None):
        super().__init__(message)
        self.best = best
        self.residuals = residuals or {}


class SingularKernelError(ProjectionError):
    def __init__(self, condition):
        super().__init__(f"kernel matrix numerically singular (condition estimate {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True)
class ConditionReport:
    """Residuals of the optimality/bound conditions for a candidate pair."""

    g1_min_atom: float
    g1_argmin: int
    g2_pairing: float
    g3_min_gap: float
    orthogonality: float
    slackness: float
    variational_margin: float
    tolerance_scale: float
    g1_tol: float = G1_TOL
    g3_tol: float = G3_TOL
    orth_rtol: float = ORTH_RTOL
    slack_tol: float = SLACK_TOL

    @property
    def g1(self):
        return self.g1_min_atom >= -self.g1_tol

    @property
    def g2(self):
        return self.g2_pairing >= -self.orth_rtol * self.tolerance_scale

    @property
    def g2_equality(self):
        return abs(self.g2_pairing) <= self.orth_rtol * self.tolerance_scale

    @property
    def g3(self):
        return self.g3_min_gap >= -self.g3_tol

    @property
    def orthogonal(self):
        return abs(self.orthogonality) <= self.orth_rtol * self.tolerance_scale

    @property
    def slack(self):
        return self.slackness <= self.slack_tol

    @property
    def variational(self):
        return self.variational_margin >= -self.orth_rtol * self.tolerance_scale

    @property
    def passed(self):
        return self.g1 and self.g2 and self.g3 and self.orthogonal and self.slack and self.variational

    def to_dict(self):
        return {
            "G1": {"pass": self.g1, "min_atom": self.g1_min_atom, "argmin": self.g1_argmin},
            "G2": {"pass": self.g2, "pairing": self.g2_pairing, "equality": self.g2_equality},
            "G3": {"pass": self.g3, "min_gap": self.g3_min_gap},
            "orthogonality": {"pass": self.orthogonal, "residual": self.orthogonality},
            "slackness": {"pass": self.slack, "max_product": self.slackness},
            "variational_inequality": {"pass": self.variational, "min_margin": self.variational_margin},
            "all_pass": self.passed,
        }


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    model: object
    f: GridFunction
    f_tilde: GridFunction
    gamma_tilde: GridMeasure
    norm_sq: float
    iterations: int = 0
    condition: float = float("nan")
    certificates: ConditionReport = field(default=None)

    @property
    def grid(self):
        return self.f.grid

    def to_dict(self):
        grid = self.grid
        out = {
            "model": self.model.to_dict(),
            "norm_sq": self.norm_sq,
            "iterations": self.iterations,
            "condition": self.condition,
            "f": self.f.values.tolist(),
            "f_tilde": self.f_tilde.values.tolist(),
            "gamma_tilde": self.gamma_tilde.atoms.tolist(),
            "certificates": self.certificates.to_dict() if self.certificates else None,
        }
        if grid.ndim == 1:
            out["nodes"] = grid.nodes.tolist()
        else:
            out["axes"] = [a.tolist() for a in grid.axes]
        return out


def _orthogonality(model, f, f_tilde):
    """RKHS pairing of ``f - f~`` with ``f~`` through the derivative representation."""
    try:
        return rkhs_inner(model, f - f_tilde, f_tilde)
    except ValueError:
        # f outside the Cameron-Martin space (non-zero on the zero set)
        return float("nan")


def check_conditions(result, f=None, n_probes=8, seed=0):
    """Evaluate the bound conditions and optimality residuals of ``result``."""
    f = result.f if f is None else f
    atoms = np.ravel(result.gamma_tilde.atoms)
    ft = np.ravel(result.f_tilde.values)
    fv = np.ravel(f.values)
    gap = ft - fv
    scale = 1.0 + abs(result.norm_sq)
    orth = _orthogonality(result.model, f, result.f_tilde)
    if np.isnan(orth):
        orth = float(np.sum((fv - ft) * atoms))
    # variational inequality at h = f~ + k for random k >= 0 and at h = 2 f~ - f
    rng = np.random.default_rng(seed)
    mask = np.ravel(result.grid.zero_mask)
    margins = []
    for _ in range(n_probes):
        k = np.where(mask, 0.0, rng.exponential(size=ft.size))
        margins.append(float(np.sum(atoms * (ft + k))) - result.norm_sq)
    pairing = float(np.sum((fv - ft) * atoms))
    margins += [pairing, -pairing]  # h = f and h = 2 f~ - f
    j = int(np.argmin(atoms)) if atoms.size else 0
    return ConditionReport(
        g1_min_atom=float(atoms.min()) if atoms.size else 0.0,
        g1_argmin=j,
        g2_pairing=pairing,
        g3_min_gap=float(gap.min()),
        orthogonality=float(orth),
        slackness=float(np.max(np.abs(atoms) * np.abs(gap))) if atoms.size else 0.0,
        variational_margin=float(min(margins)),
        tolerance_scale=scale,
    )


def _solve_free(r, rhs, free):
    idx = np.flatnonzero(free)
    out = np.zeros_like(rhs)
    if idx.size:
        out[idx] = cho_solve(cho_factor(r[np.ix_(idx, idx)]), rhs[idx])
    return out


def solve_nonnegative_qp(r, f, start=None, max_iter=None, tol=1e-13):
    """Primal active-set method for ``min 1/2 x'Rx - f'x`` subject to ``x >= 0``.

    ``R`` must be positive definite. ``start`` is any feasible point
    (non-negative vector); the default is the origin. Ties between
    candidate indices are broken towards the lowest index.

    Returns ``(x, free, iterations)`` where ``free`` flags the inactive
    bounds (nodes where the dominance constraint binds).
    """
    n = f.size
    scale = max(1.0, float(np.max(np.abs(f))) if n else 1.0, float(np.max(np.abs(np.diag(r)))) if n else 1.0)
    x = np.zeros(n) if start is None else np.maximum(np.asarray(start, dtype=float), 0.0)
    free = x > 0
    max_iter = 20 * n + 50 if max_iter is None else max_iter
    for it in range(1, max_iter + 1):
        z = _solve_free(r, f, free)
        p = z - x
        if np.max(np.abs(p), initial=0.0) <= tol * scale:
            x = z
            grad = r @ x - f
            bound = ~free
            if not bound.any() or grad[bound].min() >= -tol * scale:
                return x, free, it
            cand = np.where(bound, grad, np.inf)
            free[int(np.argmin(cand))] = True
            continue
        shrink = free & (p < 0)
        alpha = 1.0
        block = -1
        if shrink.any():
            ratios = np.full(n, np.inf)
            ratios[shrink] = -x[shrink] / p[shrink]
            block = int(np.argmin(ratios))
            if ratios[block] < 1.0:
                alpha = float(ratios[block])
            else:
                block = -1
        x = x + alpha * p
        if block >= 0:
            x[block] = 0.0
            free[block] = False
        x[~free] = 0.0
    raise ProjectionError(
        f"active-set method did not converge in {max_iter} iterations",
        best=x,
        residuals={"min_slack": float((r @ x - f).min()), "min_atom": float(x.min())},
    )


def _kernel_system(model, grid, f):
    mask = np.ravel(grid.zero_mask)
    fv = np.ravel(f.values)
    if np.any(fv[mask] > 0):
        raise ValueError("drift is positive on the zero set: the cone is empty")
    free = np.flatnonzero(~mask)
    r = np.asarray(model.kernel_matrix(grid), dtype=float)[np.ix_(free, free)]
    return r, fv[free], free


def condition_estimate(r):
    if r.size == 0:
        return 1.0
    w = np.linalg.eigvalsh(r)
    if w[0] <= 0:
        return float("inf")
    return float(w[-1] / w[0])


def project_onto_cone(model, grid, f, start=None, max_iter=None, cond_limit=COND_LIMIT, check=True):
    """Minimal-norm element of the Cameron-Martin space dominating ``f`` at the nodes."""
    if f.grid != grid:
        raise ValueError("drift lives on a different grid")
    r, rhs, free_nodes = _kernel_system(model, grid, f)
    cond = condition_estimate(r)
    if cond > cond_limit:
        raise SingularKernelError(cond)
    s0 = None
    if start is not None:
        s0 = np.ravel(np.asarray(start, dtype=float))
        if s0.size == grid.size:
            s0 = s0[free_nodes]
    x, _, iters = solve_nonnegative_qp(r, rhs, start=s0, max_iter=max_iter)
    atoms = np.zeros(grid.size)
    atoms[free_nodes] = x
    gamma = GridMeasure(grid, atoms.reshape(grid.shape))
    f_tilde = apply_R(model, gamma)
    norm_sq = float(x @ (r @ x))
    res = ProjectionResult(model, f, f_tilde, gamma, norm_sq, iters, cond)
    if check:
        res = ProjectionResult(model, f, f_tilde, gamma, norm_sq, iters, cond, check_conditions(res))
    log.debug("projection: %d iterations, norm_sq=%.12g, cond=%.3g", iters, norm_sq, cond)
    return res


def projection_from_majorant(model, m):
    """Wrap a closed-form majorant as a ProjectionResult (with certificates)."""
    res = ProjectionResult(model, m.f, m.majorant, m.induced_measure, m.norm_sq)
    return ProjectionResult(model, m.f, m.majorant, m.induced_measure, m.norm_sq, 0, float("nan"), check_conditions(res))


@dataclass(frozen=True)
class UniquenessReport:
    norm_sq: tuple
    max_f_tilde_diff: float
    max_norm_diff: float
    f_tol: float = 1e-7
    norm_tol: float = 1e-9

    @property
    def agree(self):
        return self.max_f_tilde_diff <= self.f_tol and self.max_norm_diff <= self.norm_tol


def uniqueness_probe(model, grid, f, perturbation_seeds=5):
    """Re-solve from random feasible starting points and compare the answers.

    The minimiser is unique, so any disagreement is a solver defect.
    """
    base = project_onto_cone(model, grid, f, check=False)
    mask = np.ravel(grid.zero_mask)
    runs = [base]
    for seed in range(int(perturbation_seeds)):
        rng = np.random.default_rng(seed)
        start = np.where(mask | (rng.random(grid.size) < 0.5), 0.0, rng.exponential(size=grid.size))
        runs.append(project_onto_cone(model, grid, f, start=start, check=False))
    fdiff = max(float(np.max(np.abs(r.f_tilde.values - base.f_tilde.values))) for r in runs)
    ndiff = max(abs(r.norm_sq - base.norm_sq) for r in runs)
    rep = UniquenessReport(tuple(r.norm_sq for r in runs), fdiff, ndiff)
    if not rep.agree:
        raise ProjectionError(
            "solver bug: restarts disagree on the unique minimiser",
            residuals={"f_tilde": fdiff, "norm_sq": ndiff},
        )
    return rep


def project(model, grid, f, method="auto", **kw):
    """Closed-form majorant when the model has one (``auto``/``majorant``), else the QP."""
    if method not in ("auto", "majorant", "qp"):
        raise ValueError(f"unknown projection method {method!r}")
    if method != "qp":
        try:
            m = model.majorant(f)
        except ValueError:
            if method == "majorant":
                raise
            m = None
        if m is not None:
            return projection_from_majorant(model, m)
        if method == "majorant":
            raise ValueError(f"{model.name} has no closed-form projection")
    return project_onto_cone(model, grid, f, **kw)
