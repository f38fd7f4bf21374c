"""Scenario runs and the built-in verification battery."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import oracles
from .bounds import BoundsReport
from .compactify import halfline_to_bridge, probability_equivalence_check, to_halfline
from .grid import GridFunction, GridMeasure
from .majorants import lncm
from .models import (
    BrownianBridge,
    BrownianSheet,
    Volterra,
    Wiener0b,
    WienerAb,
    WienerAb0,
    apply_R,
    product_drift_solution,
    volterra_apply,
)
from .projection import (
    COND_LIMIT,
    ProjectionError,
    project,
    project_onto_cone,
    projection_from_majorant,
    solve_nonnegative_qp,
)
from .scenario import Scenario, ScenarioError, eval_family
from .simulation import estimate_band_P, estimate_P, sandwich_check

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_json(obj, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(_plain(obj), fh, indent=2)
        fh.write("\n")


# -- scenario pipeline -----------------------------------------------------

@dataclasses.dataclass
class RunSettings:
    seed: int = None
    replicates: int = None
    grid: int = None
    mc_grid: int = None
    threads: int = None


def _apply_overrides(sc, st):
    doc = sc.doc
    if st.grid is not None:
        doc.setdefault("grid", {})["analysis"] = int(st.grid)
    if st.mc_grid is not None:
        doc.setdefault("grid", {})["mc"] = int(st.mc_grid)
    mc = doc.setdefault("mc", {})
    if st.seed is not None:
        mc["seed"] = int(st.seed)
    if st.replicates is not None:
        mc["replicates"] = int(st.replicates)
    # re-validate so overrides obey the same schema
    return Scenario(doc, sc.base_dir)


def _tolerances(report, tol):
    if report is None or not tol:
        return report
    names = {"g1": "g1_tol", "g3": "g3_tol", "orthogonality": "orth_rtol", "slackness": "slack_tol"}
    return dataclasses.replace(report, **{names[k]: v for k, v in tol.items() if k in names})


def scenario_projection(sc):
    """Projection on the analysis grid plus anything the report needs alongside it."""
    model = sc.model
    grid = sc.grid("analysis")
    extra = {}
    if isinstance(model, BrownianSheet):
        f1, f2 = sc.product_factors(grid)
        m = product_drift_solution(f1, f2, model)
        res = projection_from_majorant(model, m)
        extra["factor_norm_sq"] = [lncm(f1).norm_sq, lncm(f2).norm_sq]
    else:
        f = sc.drift(grid)
        kw = {"cond_limit": sc.tolerances.get("condition_limit", COND_LIMIT)}
        if sc.max_iter:
            kw["max_iter"] = sc.max_iter
        res = project(model, grid, f, method=sc.projection_method, **kw)
    res = dataclasses.replace(res, certificates=_tolerances(res.certificates, sc.tolerances))
    return res, extra


def _thetas(sc, res):
    g = res.grid
    u = sc.boundary(g)
    th = float(np.sum(res.gamma_tilde.atoms * u.values))
    um = sc.lower_boundary(g)
    thm = float(np.sum(res.gamma_tilde.atoms * um.values)) if um is not None else float("nan")
    return th, thm


def _summary(sc, res, bounds, sandwich, status):
    cert = res.certificates
    lines = [
        f"scenario: {sc.doc.get('name', '(unnamed)')}",
        f"model: {res.model!r}" + ("  [half-line problem mapped to the bridge]" if sc.halfline else ""),
        f"analysis grid: {res.grid.shape}",
        "",
        f"squared RKHS norm of the minimal dominating drift: {res.norm_sq:.15g}",
        f"boundary pairing with the representing measure:    {bounds.theta_u:.15g}",
    ]
    if math.isfinite(bounds.theta_u_minus):
        lines.append(f"lower-boundary pairing:                             {bounds.theta_u_minus:.15g}")
    if cert is not None:
        d = cert.to_dict()
        lines.append("")
        lines.append("certificates:")
        lines.append(f"  measure non-negative     {'pass' if cert.g1 else 'FAIL'}  min atom {d['G1']['min_atom']:.3e}")
        lines.append(f"  drift pairing >= 0       {'pass' if cert.g2 else 'FAIL'}  value {d['G2']['pairing']:.3e}")
        lines.append(f"  minimiser dominates      {'pass' if cert.g3 else 'FAIL'}  min gap {d['G3']['min_gap']:.3e}")
        lines.append(f"  orthogonality            {'pass' if cert.orthogonal else 'FAIL'}  residual {cert.orthogonality:.3e}")
        lines.append(f"  complementary slackness  {'pass' if cert.slack else 'FAIL'}  max {cert.slackness:.3e}")
        lines.append(f"  variational inequality   {'pass' if cert.variational else 'FAIL'}  margin {cert.variational_margin:.3e}")
    lines.append("")
    lines.append("per-c log-scale values (two-term asymptote, upper bound, lower bound, MC estimate):")
    rows = bounds.rows()
    for i, c in enumerate(rows["c"]):
        vals = [rows[k][i] for k in ("asymptote", "upper", "lower", "mc_log_estimate")]
        txt = "  ".join("        n/a" if not math.isfinite(v) else f"{v:11.5f}" for v in vals)
        lines.append(f"  c={c:<8g} {txt}")
    if sandwich is not None:
        lines.append("")
        lines.append(f"sandwich: {'all inside' if sandwich.passed else 'violations at c=' + str(sandwich.violations)}")
        lines.append(f"normalised residual non-increasing: {sandwich.residuals_non_increasing()}")
    lines.append("")
    lines.append(f"status: {status}")
    return "\n".join(lines) + "\n"


def run_scenario(path, out, command="sandwich", settings=None):
    """Run one scenario and write its artifacts into ``out``; returns the exit code."""
    settings = settings or RunSettings()
    out = Path(out)
    try:
        sc = _apply_overrides(Scenario.load(path), settings)
        if command == "transform":
            return _run_transform(sc, out)
        res, extra = scenario_projection(sc)
        theta_u, theta_m = _thetas(sc, res)
    except ScenarioError as exc:
        log.error("invalid scenario: %s", exc)
        return EXIT_INVALID
    except ProjectionError as exc:
        print(f"error: projection failed: {exc}; residuals {exc.residuals}")
        return EXIT_FAIL
    out.mkdir(parents=True, exist_ok=True)
    write_json({**res.to_dict(), **extra}, out / "projection.json")
    cert_ok = res.certificates is None or res.certificates.passed
    if not cert_ok:
        print("certificate failure:", json.dumps(_plain(res.certificates.to_dict())))
    if command == "project":
        return EXIT_OK if cert_ok else EXIT_FAIL

    bounds = BoundsReport(res.norm_sq, theta_u, theta_m, sc.c_values)
    sandwich = None
    status_ok = cert_ok
    if command in ("simulate", "sandwich"):
        mc = sc.mc
        mg = sc.grid("mc")
        f, u, um = sc.drift(mg), sc.boundary(mg), sc.lower_boundary(mg)
        if command == "simulate" or not cert_ok:
            ests = [
                estimate_P(sc.model, mg, c * f, u, mc["replicates"], mc["seed"], mc["monitoring"], settings.threads)
                for c in sc.c_values
            ]
            band = None
            if um is not None:
                band = estimate_band_P(sc.model, mg, u, um, mc["replicates"], mc["seed"], mc["monitoring"], settings.threads)
            write_json(
                {"estimates": [e.to_dict() for e in ests], "band": band.to_dict() if band else None, "c": sc.c_values},
                out / "simulation.json",
            )
        else:
            sandwich = sandwich_check(
                sc.model,
                mg,
                f,
                u,
                um,
                sc.c_values,
                mc["replicates"],
                mc["seed"],
                projection=res,
                allowance=mc["allowance"],
                reference=mc["reference"],
                monitoring=mc["monitoring"],
                threads=settings.threads,
            )
            ests = [r.estimate for r in sandwich.rows]
            band = sandwich.band
            if sandwich.references:
                bounds.log_ref = np.array([r.ci_high for r in sandwich.references])
            write_json({**sandwich.to_dict(), "settings": mc}, out / "sandwich.json")
            status_ok = status_ok and sandwich.passed
        if band is not None and not band.censored:
            bounds.log_band = band.log_p_hat
        bounds.mc_log_estimate = np.array([e.log_p_hat for e in ests])
        bounds.mc_ci_low = np.array([e.ci_low for e in ests])
        bounds.mc_ci_high = np.array([e.ci_high for e in ests])
    bounds.to_csv(out / "bounds.csv")
    write_json(bounds.to_dict(), out / "bounds.json")
    status = "ok" if status_ok else "FAILED"
    (out / "summary.txt").write_text(_summary(sc, res, bounds, sandwich, status), newline="\n")
    return EXIT_OK if status_ok else EXIT_FAIL


def _run_transform(sc, out):
    if not sc.halfline:
        raise ScenarioError("domain", "transform needs a half-line scenario")
    grid = sc.grid("analysis")
    s = to_halfline(grid.nodes[:-1])
    fspec, uspec = sc.doc["drift"], sc.doc["boundary"]
    tr = halfline_to_bridge(
        lambda x: eval_family(fspec, x, sc.base_dir, "drift"),
        lambda x: eval_family(uspec, x, sc.base_dir, "boundary"),
        s=s,
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transform.csv", "w", newline="") as fh:
        fh.write("t,s,f_bar,u_bar\n")
        s_full = np.append(s, np.inf)
        ub = tr.u_bar.values if tr.u_bar is not None else np.full(grid.size, np.nan)
        for t, si, fb, uv in zip(grid.nodes, s_full, tr.f_bar.values, ub):
            fh.write(",".join(format(float(x), ".14e") for x in (t, si, fb, uv)) + "\n")
    write_json(
        {
            "u_at_infinity": tr.u_at_infinity,
            "tail_liminf": tr.tail_liminf,
            "zero_probability": tr.zero_probability,
            "negative_liminf": tr.negative_liminf,
        },
        out / "transform.json",
    )
    if tr.zero_probability:
        print("boundary falls below the pinned endpoint: both probabilities are 0")
    return EXIT_OK


# -- verification battery ----------------------------------------------------

def _ou_kernel(t, s):
    return np.exp(-(t - s))


def _ou_covariance(t, s):
    m = np.minimum(t, s)
    return np.exp(-(t + s)) * (np.exp(2 * m) - 1) / 2


def write_reference_kernel(path, n=65):
    """Kernel table ``exp(-(t - s))`` used by the factorization check."""
    Volterra.from_callable(_ou_kernel, np.linspace(0.0, 1.0, n)).to_csv(path)


def _suite_drifts(t, lo=None, hi=None):
    lo = t[0] if lo is None else lo
    hi = t[-1] if hi is None else hi
    x = (t - lo) / (hi - lo)
    tent = np.minimum(x, 1 - x) * 2
    w = np.interp(x, [0, 0.25, 0.5, 0.75, 1], [0, 0.5, 0.2, 0.6, 0])
    return {"tent": tent, "quad": x - x * x, "w_shape": w, "linear": x}


def majorant_suite(n=33):
    """``(name, model, grid, f)`` cases where a closed-form majorant exists."""
    cases = []
    m = Wiener0b()
    g = m.grid(n)
    for k, v in _suite_drifts(g.nodes).items():
        cases.append((f"wiener/{k}", m, g, GridFunction(g, v)))
    m = BrownianBridge()
    g = m.grid(n)
    for k, v in _suite_drifts(g.nodes).items():
        # the bridge is pinned at 1, so the ramp drops to 0 there
        cases.append((f"bridge/{k}", m, g, GridFunction(g, np.where(g.zero_mask, 0.0, v))))
    m = WienerAb0(-1.0, 1.0)
    g = m.grid(n)
    t = g.nodes
    for k, v in _suite_drifts(np.abs(t), 0.0, 1.0).items():
        side = np.where(t < 0, 0.7, 1.0)
        cases.append((f"glued/{k}", m, g, GridFunction(g, v * side)))
    m = WienerAb(0.5, 2.0)
    g = m.grid(n)
    for k, v in _suite_drifts(g.nodes).items():
        cases.append((f"extended/{k}", m, g, GridFunction(g, v + 0.25)))
    return cases


def check_majorant_equivalence(n=33, f_tol=1e-7, norm_tol=1e-9):
    rows = []
    for name, m, g, f in majorant_suite(n):
        qp = project_onto_cone(m, g, f)
        hull = m.majorant(f)
        df = float(np.max(np.abs(qp.f_tilde.values - hull.majorant.values)))
        dn = abs(qp.norm_sq - hull.norm_sq)
        rows.append((name, df, dn, df <= f_tol and dn <= norm_tol, qp))
    return rows


def check_fixed_points(tol=1e-7, n=33):
    rows = []
    for m in (Wiener0b(), BrownianBridge()):
        g = m.grid(n)
        free = ~g.zero_mask
        measures = {"uniform": np.where(free, 1.0 / free.sum(), 0.0)}
        if m.name == "wiener":
            measures["dirac_1"] = GridMeasure.dirac(g, 1.0).atoms
        else:
            measures["dirac_0.5"] = GridMeasure.dirac(g, 0.5).atoms
        for k, a in measures.items():
            gam = GridMeasure(g, a)
            f = apply_R(m, gam)
            res = project_onto_cone(m, g, f)
            err = float(np.max(np.abs(res.gamma_tilde.atoms - gam.atoms)))
            ferr = float(np.max(np.abs(res.f_tilde.values - f.values)))
            rows.append((f"{m.name}/{k}", err, max(err, ferr) <= tol))
    return rows


def check_volterra_factorization(table=None, tol=1e-3):
    """Gram matrix of the adjoint images vs the covariance, and vs the closed form.

    ``table`` is a CSV for the kernel ``exp(-(t - s))``; the default is
    generated in memory.
    """
    try:
        model = Volterra.from_csv(table) if table else Volterra.from_callable(_ou_kernel, np.linspace(0, 1, 65))
    except (ValueError, OSError, IndexError) as exc:
        return False, f"kernel table unusable: {exc}"
    g = model.grid(model.nodes.size)
    n = g.size
    d = np.diff(model.nodes)
    cols = np.array([volterra_apply(model, "adjoint", GridMeasure(g, np.eye(n)[i] * (~g.zero_mask[i]))) for i in range(n)])
    gram = (cols * d) @ cols.T
    r = model.kernel_matrix(g)
    tt, ss = np.meshgrid(model.nodes, model.nodes, indexing="ij")
    exact = _ou_covariance(tt, ss)
    e1 = float(np.max(np.abs(gram - r)))
    e2 = float(np.max(np.abs(r - exact)))
    return e1 <= 1e-12 and e2 <= tol, f"gram-vs-R {e1:.2e}, R-vs-closed-form {e2:.2e}"


def check_kkt_enumeration(trials=100, seed=0, nodes=6):
    """Random drifts on tiny grids: solver output vs exhaustive support enumeration."""
    rng = np.random.default_rng(seed)
    models = [Wiener0b(), BrownianBridge()]
    worst = 0.0
    same_support = True
    for k in range(trials):
        m = models[k % 2]
        n_nodes = nodes + 1 if m.name == "wiener" else nodes + 2
        g = m.grid(n_nodes)
        r = m.kernel_matrix(g)[np.ix_(~g.zero_mask, ~g.zero_mask)]
        fv = rng.normal(size=int((~g.zero_mask).sum()))
        x, free, _ = solve_nonnegative_qp(r, fv)
        found = oracles.enumerate_kkt(r, fv)
        xs = np.array([y for _, y in found])
        worst = max(worst, float(np.max(np.abs(xs - x))))
        same_support &= any(set(np.flatnonzero(free)) == set(s) for s, _ in found)
    return worst <= 1e-12 and same_support, worst


def verify_suite(replicates=100_000, seed=0, kernel_table=None, threads=None, echo=print):
    """Run the oracle battery; returns ``(all_passed, items)``."""
    items = []

    def record(name, ok, detail):
        items.append({"item": name, "pass": bool(ok), "detail": detail})
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    t0 = time.perf_counter()
    m = Wiener0b()
    g = m.grid(2001)
    zero, one = GridFunction(g, np.zeros(g.size)), GridFunction(g, np.ones(g.size))
    e = estimate_P(m, g, zero, one, replicates, seed, threads=threads)
    ref = oracles.wiener_sup_cdf(1.0)
    record("reflection principle", abs(e.p_hat - ref) <= 4 * e.se + 0.002, f"p={e.p_hat:.5f} oracle={ref:.5f} se={e.se:.1e}")

    b = BrownianBridge()
    gb = b.grid(2001)
    e = estimate_P(b, gb, GridFunction(gb, np.zeros(gb.size)), GridFunction(gb, np.ones(gb.size)), replicates, seed + 1, threads=threads)
    ref = oracles.bridge_sup_cdf(1.0)
    record("bridge supremum", abs(e.p_hat - ref) <= 4 * e.se + 0.002, f"p={e.p_hat:.5f} oracle={ref:.5f} se={e.se:.1e}")

    e = estimate_band_P(m, g, one, -one, replicates, seed + 2, threads=threads)
    ref = oracles.wiener_band_images(1.0, -1.0)
    record("two-sided band", abs(e.p_hat - ref) <= 4 * e.se + 0.002, f"p={e.p_hat:.5f} oracle={ref:.5f} se={e.se:.1e}")

    rows = check_majorant_equivalence()
    bad = [r[0] for r in rows if not r[3]]
    record(
        "QP vs majorant",
        not bad,
        f"{len(rows)} cases, max node diff {max(r[1] for r in rows):.1e}, max norm diff {max(r[2] for r in rows):.1e}"
        + (f", failing {bad}" if bad else ""),
    )
    orth = max(abs(r[4].certificates.orthogonality) / (1 + r[4].norm_sq) for r in rows)
    record("orthogonality certificate", orth <= 1e-8, f"max scaled residual {orth:.1e}")

    fp = check_fixed_points()
    record("fixed points of the projection", all(r[2] for r in fp), ", ".join(f"{r[0]} {r[1]:.1e}" for r in fp))

    ok, detail = check_volterra_factorization(kernel_table)
    record("Volterra factorization", ok, detail)

    ok, worst = check_kkt_enumeration(trials=20)
    record("KKT enumeration", ok, f"max diff {worst:.1e}")
    log.info("verify suite finished in %.1fs", time.perf_counter() - t0)
    return all(i["pass"] for i in items), items


def halfline_report(replicates, seed, threads=None):
    """Half-line check for ``f = 0``, ``u(s) = 1 + s`` against the closed form."""
    return probability_equivalence_check(
        lambda s: np.zeros_like(s), lambda s: 1.0 + s, replicates, seed, closed_form=oracles.bridge_sup_cdf(1.0), threads=threads
    )


__all__ = [
    "RunSettings",
    "check_fixed_points",
    "check_kkt_enumeration",
    "check_majorant_equivalence",
    "check_volterra_factorization",
    "halfline_report",
    "majorant_suite",
    "run_scenario",
    "verify_suite",
    "write_reference_kernel",
]
