"""Monte Carlo estimation of non-crossing probabilities.

Replicates are split into fixed blocks. Block ``b`` draws its Gaussians
from the stream keyed ``(seed, 2b)`` and its uniforms from ``(seed, 2b + 1)``
(``SeedSequence`` spawn keys into SFC64), so every block is reproducible on
its own and integer hit counts make the total independent of how blocks
are spread over worker threads (``GC_THREADS``).

For Markov models the check between nodes is exact: given the node values
the path inside a cell is a Brownian bridge, and the chance that it stays
below a linear barrier is ``1 - exp(-2 g0 g1 / var)`` with ``g0, g1`` the
gaps at the cell ends. One uniform per path turns the product of these
factors into a hit.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .bounds import asymptote
from .grid import GridFunction, resample
from .projection import project

log = logging.getLogger(__name__)

BLOCK = 1024
MIN_REPLICATES = 1000
Z99 = 2.5758293035489004  # two-sided 99% normal quantile
# exp(-40) is below double resolution next to 1
_EXP_CUTOFF = 40.0


def worker_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("GC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"GC_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _stream(seed, key):
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=(key,))))


@dataclass(frozen=True)
class MCEstimate:
    hits: int
    replicates: int
    seed: int
    monitoring: str = "nodes"
    z: float = Z99

    @property
    def p_hat(self):
        return self.hits / self.replicates

    @property
    def log_p_hat(self):
        return math.log(self.p_hat) if self.hits else -math.inf

    @property
    def se(self):
        p = self.p_hat
        return math.sqrt(p * (1 - p) / self.replicates)

    @property
    def censored(self):
        return self.hits == 0

    def p_interval(self):
        """99% interval for ``p``: logit-normal, rule of three at 0 or n hits."""
        n, k = self.replicates, self.hits
        if k == 0:
            return 0.0, min(1.0, 3.0 / n)
        if k == n:
            return max(0.0, 1.0 - 3.0 / n), 1.0
        p = k / n
        lg = math.log(p / (1 - p))
        half = self.z / math.sqrt(n * p * (1 - p))
        return 1 / (1 + math.exp(-(lg - half))), 1 / (1 + math.exp(-(lg + half)))

    @property
    def ci_low(self):
        lo = self.p_interval()[0]
        return math.log(lo) if lo > 0 else -math.inf

    @property
    def ci_high(self):
        return math.log(self.p_interval()[1])

    def to_dict(self):
        return {
            "hits": self.hits,
            "replicates": self.replicates,
            "seed": self.seed,
            "monitoring": self.monitoring,
            "p_hat": self.p_hat,
            "log_p_hat": _finite_or_none(self.log_p_hat),
            "ci_low": _finite_or_none(self.ci_low),
            "ci_high": _finite_or_none(self.ci_high),
            "se": self.se,
        }


def _finite_or_none(x):
    return x if math.isfinite(x) else None


@numba.njit(nogil=True, cache=True)
def _count_hits(paths, shift, upper, lower, up_l, up_r, lo_l, lo_r, has_lower, var, unif, out):
    """Add per-event hit counts for a block of paths to ``out``.

    Event ``e`` asks for ``lower[e] <= X + shift[e] <= upper[e]`` at the nodes
    and, when ``var`` is non-empty, between them. ``up_l``/``up_r`` (and the
    lower analogues) are the barrier values seen at the left and right end
    of every cell.
    """
    n_paths, n_nodes = paths.shape
    n_events = shift.shape[0]
    bridge = var.shape[0] > 0
    for p in range(n_paths):
        x = paths[p]
        for e in range(n_events):
            ok = True
            for i in range(n_nodes):
                y = x[i] + shift[e, i]
                if y > upper[e, i] or (has_lower[e] and y < lower[e, i]):
                    ok = False
                    break
            if not ok:
                continue
            if bridge:
                surv = 1.0
                for i in range(n_nodes - 1):
                    y0 = x[i] + shift[e, i]
                    y1 = x[i + 1] + shift[e, i + 1]
                    a = 2.0 * (up_l[e, i] - y0) * (up_r[e, i] - y1) / var[i]
                    if a < _EXP_CUTOFF:
                        surv *= 1.0 - math.exp(-a)
                    if has_lower[e]:
                        b = 2.0 * (y0 - lo_l[e, i]) * (y1 - lo_r[e, i]) / var[i]
                        if b < _EXP_CUTOFF:
                            surv *= 1.0 - math.exp(-b)
                    if surv <= unif[p]:
                        ok = False
                        break
            if ok:
                out[e] += 1


def _cell_ends(values, zero_mask):
    """Barrier values at both ends of each cell.

    At a zero-set node the path is pinned, so only the deterministic node
    check uses the barrier value there; inside the adjacent cell the
    barrier is continued flat from the other end.
    """
    left = values[:, :-1].copy()
    right = values[:, 1:].copy()
    zl, zr = zero_mask[:-1], zero_mask[1:]
    left[:, zl] = right[:, zl]
    right[:, zr] = left[:, zr]
    return left, right


def resolve_monitoring(model, grid, monitoring="auto"):
    """``"continuous"`` when the model admits exact between-node checks, else ``"nodes"``."""
    if monitoring not in ("auto", "nodes", "continuous"):
        raise ValueError(f"unknown monitoring mode {monitoring!r}")
    var = model.cell_variance(grid) if grid.ndim == 1 else None
    if monitoring == "nodes":
        return "nodes", None
    if var is None:
        if monitoring == "continuous":
            raise ValueError(f"{model.name} supports node monitoring only")
        return "nodes", None
    return "continuous", np.asarray(var, dtype=float)


@dataclass
class _Events:
    shift: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    has_lower: np.ndarray
    cells: tuple = field(default=())


def _events(grid, shifts, uppers, lowers):
    n = grid.size
    shift = np.ascontiguousarray(np.reshape(shifts, (-1, n)), dtype=float)
    upper = np.ascontiguousarray(np.reshape(uppers, (-1, n)), dtype=float)
    lower = np.full_like(upper, -np.inf)
    has_lower = np.zeros(upper.shape[0], dtype=np.bool_)
    for e, lo in enumerate(lowers):
        if lo is not None:
            lower[e] = np.ravel(lo)
            has_lower[e] = True
    ev = _Events(shift, upper, lower, has_lower)
    if grid.ndim == 1:
        mask = np.ravel(grid.zero_mask)
        ul, ur = _cell_ends(upper, mask)
        safe = np.where(np.isfinite(lower), lower, 0.0)
        ll, lr = _cell_ends(safe, mask)
        ev.cells = (ul, ur, ll, lr)
    return ev


def count_hits(paths, shift, upper, lower=None, var=None, uniforms=None, zero_mask=None):
    """Hit counts of explicit paths ``(size, nodes)`` for a stack of events.

    ``shift``/``upper``/``lower`` have shape ``(events, nodes)``; ``lower``
    may be None. Without ``var`` only the nodes are checked.
    """
    paths = np.ascontiguousarray(paths, dtype=float)
    n = paths.shape[1]
    shift = np.atleast_2d(np.asarray(shift, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    lo = np.full_like(upper, -np.inf) if lower is None else np.atleast_2d(np.asarray(lower, dtype=float))
    has_lower = np.isfinite(lo).any(axis=1)
    mask = np.zeros(n, dtype=bool) if zero_mask is None else np.ravel(zero_mask)
    ul, ur = _cell_ends(upper, mask)
    ll, lr = _cell_ends(np.where(np.isfinite(lo), lo, 0.0), mask)
    v = np.zeros(0) if var is None else np.asarray(var, dtype=float)
    u = np.zeros(paths.shape[0]) if uniforms is None else np.asarray(uniforms, dtype=float)
    out = np.zeros(upper.shape[0], dtype=np.int64)
    _count_hits(paths, shift, upper, lo, ul, ur, ll, lr, has_lower, v, u, out)
    return out


def _simulate(model, grid, ev, replicates, seed, monitoring, threads):
    replicates = int(replicates)
    if replicates < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicates")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    mode, var = resolve_monitoring(model, grid, monitoring)
    v = var if var is not None else np.zeros(0)
    if ev.cells:
        ul, ur, ll, lr = ev.cells
    else:
        ul = ur = ll = lr = np.zeros((ev.shift.shape[0], 0))
    n_blocks = -(-replicates // BLOCK)

    def work(b):
        size = min(BLOCK, replicates - b * BLOCK)
        paths = model.sample(grid, _stream(seed, 2 * b), size).reshape(size, -1)
        unif = _stream(seed, 2 * b + 1).random(size)
        out = np.zeros(ev.shift.shape[0], dtype=np.int64)
        _count_hits(
            np.ascontiguousarray(paths), ev.shift, ev.upper, ev.lower, ul, ur, ll, lr, ev.has_lower, v, unif, out
        )
        return out

    nw = min(worker_count(threads), n_blocks)
    if nw == 1:
        totals = sum(work(b) for b in range(n_blocks))
    else:
        with ThreadPoolExecutor(nw) as ex:
            totals = sum(ex.map(work, range(n_blocks)))
    log.debug("simulated %d paths on %d nodes (%s, %d workers)", replicates, grid.size, mode, nw)
    return [MCEstimate(int(h), replicates, seed, mode) for h in totals]


def sample_path(model, grid, seed, index=0):
    """Path ``index`` of the stream used by the estimators for ``seed``."""
    b, r = divmod(int(index), BLOCK)
    size = r + 1
    paths = model.sample(grid, _stream(int(seed), 2 * b), size)
    return GridFunction(grid, paths[r])


def band_is_open(u, u_minus):
    """``u_minus < u`` off the zero set; on it the path is pinned, so ``<=`` suffices."""
    lo, up, mask = u_minus.values, u.values, u.grid.zero_mask
    return bool(np.all(np.where(mask, lo <= up, lo < up)))


def _check_same(grid, *funcs):
    for g in funcs:
        if g is not None and g.grid != grid:
            raise ValueError("functions must live on the simulation grid")


def estimate_P(model, grid, f, u, replicates, seed, monitoring="auto", threads=None):
    """Estimate ``P(X + f <= u)`` on the grid."""
    _check_same(grid, f, u)
    ev = _events(grid, [f.values], [u.values], [None])
    return _simulate(model, grid, ev, replicates, seed, monitoring, threads)[0]


def estimate_band_P(model, grid, u, u_minus, replicates, seed, monitoring="auto", threads=None):
    """Estimate ``P(u_minus <= X <= u)`` on the grid."""
    _check_same(grid, u, u_minus)
    if not band_is_open(u, u_minus):
        raise ValueError("band must have positive width at every node")
    ev = _events(grid, [np.zeros(grid.shape)], [u.values], [u_minus.values])
    return _simulate(model, grid, ev, replicates, seed, monitoring, threads)[0]


def estimate_many(model, grid, shifts, uppers, lowers, replicates, seed, monitoring="auto", threads=None):
    """Several events on one shared set of paths (common random numbers)."""
    ev = _events(grid, shifts, uppers, lowers)
    return _simulate(model, grid, ev, replicates, seed, monitoring, threads)


# -- sandwich validation ----------------------------------------------------

@dataclass
class SandwichRow:
    c: float
    estimate: MCEstimate
    log_upper: float
    log_lower: float
    asymptote: float
    allowance: float

    @property
    def censored(self):
        return self.estimate.censored

    def _adjusted(self):
        lo, hi = self.estimate.p_interval()
        lo = max(lo - self.allowance, 0.0)
        hi = min(hi + self.allowance, 1.0)
        return (math.log(lo) if lo > 0 else -math.inf), math.log(hi)

    @property
    def upper_ok(self):
        return self._adjusted()[0] <= self.log_upper

    @property
    def lower_ok(self):
        if self.censored or not math.isfinite(self.log_lower):
            return True
        return self._adjusted()[1] >= self.log_lower

    @property
    def passed(self):
        return self.upper_ok and self.lower_ok

    @property
    def residual(self):
        """``(log P - asymptote) / c``; tends to 0 for large ``c``."""
        if self.c == 0:
            return float("nan")
        return (self.estimate.log_p_hat - self.asymptote) / self.c

    def residual_interval(self):
        """Range of ``|residual|`` over the log-scale confidence interval."""
        a = (self.estimate.ci_low - self.asymptote) / self.c
        b = (self.estimate.ci_high - self.asymptote) / self.c
        lo, hi = min(a, b), max(a, b)
        if lo <= 0 <= hi:
            return 0.0, max(-lo, hi)
        return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))

    def to_dict(self):
        return {
            "c": self.c,
            "log_p_hat": _finite_or_none(self.estimate.log_p_hat),
            "ci_low": _finite_or_none(self.estimate.ci_low),
            "ci_high": _finite_or_none(self.estimate.ci_high),
            "hits": self.estimate.hits,
            "log_upper": float(self.log_upper),
            "log_lower": _finite_or_none(float(self.log_lower)),
            "asymptote": float(self.asymptote),
            "residual": _finite_or_none(self.residual),
            "censored": self.censored,
            "upper_ok": bool(self.upper_ok),
            "lower_ok": bool(self.lower_ok),
            "pass": bool(self.passed),
        }


@dataclass
class SandwichReport:
    norm_sq: float
    theta_u: float
    theta_u_minus: float
    band: MCEstimate
    rows: list
    references: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(all(r.passed for r in self.rows))

    @property
    def violations(self):
        return [r.c for r in self.rows if not r.passed]

    def residuals(self):
        return np.array([r.residual for r in self.rows])

    def one_term_residuals(self):
        return np.array(
            [abs(r.estimate.log_p_hat + 0.5 * r.c**2 * self.norm_sq) / r.c if r.c > 0 else np.nan for r in self.rows]
        )

    def residuals_non_increasing(self):
        """``|residual|`` never rises by more than the confidence slack."""
        iv = [r.residual_interval() for r in self.rows if not r.censored and r.c > 0]
        return all(iv[k + 1][0] <= iv[k][1] for k in range(len(iv) - 1))

    def to_dict(self):
        return {
            "norm_sq": self.norm_sq,
            "theta_u": self.theta_u,
            "theta_u_minus": _finite_or_none(self.theta_u_minus),
            "band": self.band.to_dict() if self.band else None,
            "references": [r.to_dict() for r in self.references],
            "rows": [r.to_dict() for r in self.rows],
            "residuals_non_increasing": bool(self.residuals_non_increasing()),
            "one_term_residuals": [_finite_or_none(float(x)) for x in self.one_term_residuals()],
            "violations": self.violations,
            "pass": bool(self.passed),
        }


def sandwich_check(
    model,
    grid,
    f,
    u,
    u_minus,
    c_values,
    replicates,
    seed,
    projection=None,
    allowance=0.002,
    reference="conservative",
    monitoring="auto",
    threads=None,
):
    """Check MC estimates of ``log P(X + c f <= u)`` against both bounds.

    ``projection`` may live on a coarser grid over the same domain; the
    boundaries are interpolated onto it for the pairings. ``reference``
    selects the factor in the upper bound: ``"conservative"`` uses 1,
    ``"mc"`` the upper confidence limit of ``P(X + c (f - f~) <= u)``
    estimated on the same paths. All events share one set of paths.
    """
    _check_same(grid, f, u, u_minus)
    if reference not in ("conservative", "mc"):
        raise ValueError("reference must be 'conservative' or 'mc'")
    c_values = np.asarray(c_values, dtype=float)
    if np.any(c_values < 0):
        raise ValueError("c values must be non-negative")
    if projection is None:
        projection = project(model, grid, f)
    cert = projection.certificates
    if cert is not None and not (cert.g1 and cert.g2 and cert.g3):
        raise ValueError("projection certificates fail; bounds do not apply")
    pg = projection.grid
    gam = projection.gamma_tilde.atoms
    theta_u = float(np.sum(gam * resample(u, pg).values)) if pg != grid else float(np.sum(gam * u.values))
    theta_m = float("nan")
    if u_minus is not None:
        um = resample(u_minus, pg).values if pg != grid else u_minus.values
        theta_m = float(np.sum(gam * um))
    norm_sq = projection.norm_sq

    shifts = [c * f.values for c in c_values]
    uppers = [u.values] * len(c_values)
    lowers = [None] * len(c_values)
    if u_minus is not None:
        if not band_is_open(u, u_minus):
            raise ValueError("band must have positive width at every node")
        shifts.append(np.zeros(grid.shape))
        uppers.append(u.values)
        lowers.append(u_minus.values)
    if reference == "mc":
        ft = projection.f_tilde if pg == grid else resample(projection.f_tilde, grid)
        resid = f.values - ft.values
        shifts += [c * resid for c in c_values]
        uppers += [u.values] * len(c_values)
        lowers += [None] * len(c_values)
    est = estimate_many(model, grid, shifts, uppers, lowers, replicates, seed, monitoring, threads)
    k = len(c_values)
    band = est[k] if u_minus is not None else None
    refs = est[k + (u_minus is not None):] if reference == "mc" else []
    log_band = band.log_p_hat if band is not None else float("nan")
    rows = []
    for j, c in enumerate(c_values):
        log_ref = refs[j].ci_high if refs else 0.0
        up = log_ref - 0.5 * c**2 * norm_sq + c * theta_u
        lo = log_band - 0.5 * c**2 * norm_sq + c * theta_m if band is not None and not band.censored else float("nan")
        rows.append(SandwichRow(float(c), est[j], up, lo, float(asymptote(norm_sq, theta_u, c)), allowance))
    return SandwichReport(norm_sq, theta_u, theta_m, band, rows, list(refs))
