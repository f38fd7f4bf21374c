import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpcross.grid import GridFunction, GridMeasure, grid_from_axes
from gpcross.models import BrownianBridge, Volterra, Wiener0b, WienerAb, WienerAb0, apply_R
from gpcross.oracles import enumerate_kkt
from gpcross.projection import (
    ProjectionError,
    ProjectionResult,
    SingularKernelError,
    check_conditions,
    project,
    project_onto_cone,
    projection_from_majorant,
    solve_nonnegative_qp,
    uniqueness_probe,
)
from gpcross.reports import majorant_suite


def tent(t):
    return np.where(t <= 0.5, 2 * t, 2 - 2 * t)


def w_shape(t):
    return np.interp(t, [0, 0.25, 0.5, 0.75, 1], [0, 0.5, 0.2, 0.6, 0])


def test_tent_on_wiener_matches_lncm():
    m = Wiener0b()
    g = m.grid(33)
    f = GridFunction(g, tent(g.nodes))
    r = project_onto_cone(m, g, f)
    np.testing.assert_allclose(r.f_tilde.values, np.minimum(2 * g.nodes, 1), atol=1e-8)
    assert r.norm_sq == pytest.approx(2.0, abs=1e-9)
    c = r.certificates
    assert c.passed and c.g2_equality
    assert abs(c.g2_pairing) < 1e-12


def test_nonpositive_drift_projects_to_zero():
    m = Wiener0b()
    g = m.grid(17)
    r = project_onto_cone(m, g, GridFunction(g, -g.nodes * (1 - g.nodes)))
    assert r.norm_sq == 0 and not np.any(r.f_tilde.values) and not np.any(r.gamma_tilde.atoms)


def test_tent_on_bridge_is_fixed():
    m = BrownianBridge()
    g = m.grid(33)
    f = GridFunction(g, tent(g.nodes))
    r = project_onto_cone(m, g, f)
    np.testing.assert_allclose(r.f_tilde.values, f.values, atol=1e-8)
    assert r.norm_sq == pytest.approx(4.0, abs=1e-9)


def test_negative_atom_flags_g1():
    m = Wiener0b()
    g = m.grid(5)
    gamma = GridMeasure(g, np.array([0.0, 0.5, -0.25, 0.0, 1.0]))
    ft = apply_R(m, gamma)
    res = ProjectionResult(m, ft, ft, gamma, float(gamma.atoms @ ft.values))
    rep = check_conditions(res)
    assert not rep.g1
    assert rep.g1_min_atom == -0.25 and rep.g1_argmin == 2


def test_identity_projection_has_zero_gap():
    m = Wiener0b()
    g = m.grid(9)
    f = GridFunction(g, np.sqrt(g.nodes))
    r = project(m, g, f, method="majorant")
    assert r.certificates.g3_min_gap == 0.0


@pytest.mark.parametrize("drift", [tent, w_shape, lambda t: np.zeros_like(t)])
def test_uniqueness_probe(drift):
    m = Wiener0b()
    g = m.grid(33)
    rep = uniqueness_probe(m, g, GridFunction(g, drift(g.nodes)), perturbation_seeds=5)
    assert rep.agree and len(set(np.round(rep.norm_sq, 12))) == 1


def test_oracle_equivalence_suite():
    for n in (9, 33, 65):
        for label, model, grid, f in majorant_suite(n):
            qp = project_onto_cone(model, grid, f)
            m = model.majorant(f)
            assert np.max(np.abs(qp.f_tilde.values - m.majorant.values)) <= 1e-7, label
            assert abs(qp.norm_sq - m.norm_sq) <= 1e-9, label
            assert qp.certificates.passed, label


def test_norm_monotone_under_refinement():
    m = Wiener0b()
    norms = []
    for n in (5, 9, 17, 33, 65, 129, 257):
        g = m.grid(n)
        norms.append(project_onto_cone(m, g, GridFunction(g, np.sin(3 * g.nodes)), check=False).norm_sq)
    assert np.all(np.diff(norms) >= -1e-12)
    assert abs(norms[-1] - norms[-2]) < 1e-3


@pytest.mark.parametrize("model", [Wiener0b(), BrownianBridge(), WienerAb(0.5, 2.0)], ids=repr)
@given(st.lists(st.floats(0, 2), min_size=8, max_size=8))
def test_fixed_point(model, raw):
    g = model.grid(10)
    atoms = np.where(g.zero_mask, 0.0, np.concatenate([raw, [0.0, 0.0]])[: g.size])
    gamma = GridMeasure(g, atoms)
    f = apply_R(model, gamma)
    r = project_onto_cone(model, g, f)
    np.testing.assert_allclose(r.gamma_tilde.atoms, atoms, atol=1e-7)
    np.testing.assert_allclose(r.f_tilde.values, f.values, atol=1e-9)


@given(st.integers(2, 6), st.data())
def test_qp_matches_kkt_enumeration(k, data):
    m = Wiener0b()
    g = grid_from_axes((np.concatenate([[0.0], np.sort(data.draw(st.lists(st.floats(0.05, 1), min_size=k, max_size=k, unique=True)))]),), m)
    if np.any(np.diff(g.nodes) < 1e-3):
        return
    f = np.concatenate([[0.0], data.draw(st.lists(st.floats(-2, 2, allow_nan=False), min_size=k, max_size=k))])
    r = np.asarray(m.kernel_matrix(g))[1:, 1:]
    x, _, _ = solve_nonnegative_qp(r, f[1:])
    sols = enumerate_kkt(r, f[1:])
    assert sols
    # degenerate data can yield several supports, but only one KKT point
    for _, y in sols:
        np.testing.assert_allclose(x, y, atol=1e-9 * (1 + np.abs(y).max()))
    pos = set(np.flatnonzero(x > 0))
    assert any(pos <= set(s) for s, _ in sols)


def test_singular_kernel_reported():
    m = Wiener0b()
    g = m.grid(9)
    with pytest.raises(SingularKernelError) as exc:
        project_onto_cone(m, g, GridFunction(g, tent(g.nodes)), cond_limit=10.0)
    assert exc.value.condition > 10


def test_iteration_cap_reports_residuals():
    m = Wiener0b()
    g = m.grid(33)
    f = GridFunction(g, w_shape(g.nodes) + 0.3 * np.sin(20 * g.nodes) * g.nodes)
    with pytest.raises(ProjectionError) as exc:
        project_onto_cone(m, g, f, max_iter=1)
    assert exc.value.residuals


def test_positive_drift_on_zero_set_rejected():
    m = BrownianBridge()
    g = m.grid(5)
    with pytest.raises(ValueError):
        project_onto_cone(m, g, GridFunction(g, np.ones(5)))


def test_project_dispatch_and_volterra():
    v = Volterra.from_callable(lambda t, s: np.exp(-(t - s)), np.linspace(0, 1, 17))
    g = v.grid(17)
    gamma = GridMeasure.dirac(g, 1.0)
    f = apply_R(v, gamma)
    r = project(v, g, f)
    np.testing.assert_allclose(r.gamma_tilde.atoms, gamma.atoms, atol=1e-7)
    assert r.certificates.passed
    with pytest.raises(ValueError):
        project(v, g, f, method="simplex")
    m = WienerAb0(-1.0, 1.0)
    g = m.grid(9)
    f = GridFunction(g, np.abs(g.nodes) * (1 - np.abs(g.nodes)))
    a, b = project(m, g, f), project(m, g, f, method="qp")
    np.testing.assert_allclose(a.f_tilde.values, b.f_tilde.values, atol=1e-9)


def test_tolerance_overrides_affect_verdict():
    m = Wiener0b()
    g = m.grid(9)
    r = project_onto_cone(m, g, GridFunction(g, tent(g.nodes)))
    strict = dataclasses.replace(r.certificates, g3_tol=-1.0)
    assert r.certificates.g3 and not strict.g3
