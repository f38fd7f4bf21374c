import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpcross.grid import GridFunction, GridMeasure
from gpcross.models import (
    BrownianBridge,
    BrownianSheet,
    Volterra,
    Wiener0b,
    WienerAb,
    WienerAb0,
    apply_R,
    is_positive_semidefinite,
    kernel_eval,
    model_from_dict,
    product_drift_solution,
    rkhs_inner,
    rkhs_norm_sq,
    volterra_apply,
)

CLOSED_FORM = [Wiener0b(), Wiener0b(b=2.0), WienerAb(0.5, 2.0), WienerAb0(-1.0, 1.0), BrownianBridge(), BrownianSheet()]


def tent(t):
    return np.where(t <= 0.5, 2 * t, 2 - 2 * t)


def test_kernel_examples():
    assert kernel_eval(Wiener0b(), 0.3, 0.7) == 0.3
    assert kernel_eval(BrownianBridge(), 0.5, 0.5) == 0.25
    assert kernel_eval(WienerAb0(-1, 1), -0.4, 0.3) == 0.0
    assert kernel_eval(WienerAb0(-1, 1), -0.4, -0.3) == 0.3
    with pytest.raises(ValueError):
        kernel_eval(BrownianBridge(), 0.5, 1.5)


def test_apply_R_examples():
    m = Wiener0b()
    g = m.grid(9)
    np.testing.assert_array_equal(apply_R(m, GridMeasure.dirac(g, 1.0)).values, g.nodes)
    assert not np.any(apply_R(m, GridMeasure.zeros(g)).values)
    b = BrownianBridge()
    g = b.grid(9)
    f = apply_R(b, GridMeasure.dirac(g, 0.5))
    np.testing.assert_allclose(f.values, np.minimum(g.nodes, 0.5) - 0.5 * g.nodes, atol=1e-16)
    assert f.values[4] == 0.25 and f.values[-1] == 0.0


def test_rkhs_examples():
    m = Wiener0b()
    g = m.grid(11)
    line = GridFunction(g, g.nodes.copy())
    assert rkhs_inner(m, line, line) == pytest.approx(1.0, abs=1e-14)
    a = apply_R(m, GridMeasure.dirac(g, 0.3))
    b = apply_R(m, GridMeasure.dirac(g, 0.7))
    assert rkhs_inner(m, a, b) == pytest.approx(0.3, abs=1e-14)
    assert rkhs_norm_sq(m, line) == pytest.approx(1.0, abs=1e-14)
    gb = BrownianBridge().grid(33)
    assert rkhs_norm_sq(BrownianBridge(), GridFunction(gb, tent(gb.nodes))) == pytest.approx(4.0, abs=1e-12)
    s = BrownianSheet()
    gs = s.grid(9)
    prod = GridFunction(gs, np.outer(gs.axes[0], gs.axes[1]))
    assert rkhs_norm_sq(s, prod) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        rkhs_norm_sq(m, GridFunction(g, g.nodes + 1))


def test_tent_residual_orthogonal():
    from gpcross.majorants import lncm

    m = Wiener0b()
    g = m.grid(33)
    f = GridFunction(g, tent(g.nodes))
    ft = lncm(f).majorant
    assert abs(rkhs_inner(m, f - ft, ft)) < 1e-14


def test_product_drift_examples():
    s = BrownianSheet()
    g = Wiener0b().grid(33)
    line = GridFunction(g, g.nodes.copy())
    r = product_drift_solution(line, line, s)
    np.testing.assert_allclose(r.majorant.values, np.outer(g.nodes, g.nodes), atol=1e-15)
    assert r.norm_sq == pytest.approx(1.0, abs=1e-12)
    tf = GridFunction(g, tent(g.nodes))
    r = product_drift_solution(tf, tf, s)
    assert r.norm_sq == pytest.approx(4.0, abs=1e-12)
    atoms = r.induced_measure.atoms
    assert atoms[16, 16] == pytest.approx(4.0) and np.count_nonzero(atoms) == 1
    gf = Wiener0b().grid(1025)
    r = product_drift_solution(GridFunction(gf, gf.nodes - gf.nodes**2), GridFunction(gf, gf.nodes.copy()), s)
    assert r.norm_sq == pytest.approx(1 / 6, abs=1e-5)
    with pytest.raises(ValueError):
        product_drift_solution(GridFunction(g, -g.nodes), line, s)


def indicator_volterra(n=65):
    return Volterra.from_callable(lambda t, s: np.ones_like(t), np.linspace(0, 1, n))


def test_volterra_indicator_is_wiener():
    v = indicator_volterra(9)
    g = v.grid(9)
    w = Wiener0b()
    np.testing.assert_allclose(v.kernel_matrix(g), w.kernel_matrix(g), atol=1e-15)
    running = volterra_apply(v, "forward", np.ones(8))
    np.testing.assert_allclose(running.values, g.nodes, atol=1e-15)
    np.testing.assert_allclose(volterra_apply(v, "adjoint", GridMeasure.dirac(g, 1.0)), 1.0)
    assert not np.any(volterra_apply(v, "forward", np.zeros(8)).values)
    assert not np.any(volterra_apply(v, "adjoint", GridMeasure.zeros(g)))


def test_volterra_factorization_against_closed_form():
    # X_t = int_0^t exp(-(t-s)) dW_s has R(t,s) = exp(-|t-s|)(1 - exp(-2 min)) / 2
    def cov(t, s):
        return 0.5 * np.exp(-abs(t - s)) * (1 - np.exp(-2 * min(t, s)))

    errs = []
    for n in (33, 65):
        nodes = np.linspace(0, 1, n)
        v = Volterra.from_callable(lambda t, s: np.exp(-(t - s)), nodes)
        g = v.grid(n)
        i, j = n // 4, 3 * n // 4
        mu_i, mu_j = GridMeasure.dirac(g, nodes[i]), GridMeasure.dirac(g, nodes[j])
        gram = np.sum(volterra_apply(v, "adjoint", mu_i) * volterra_apply(v, "adjoint", mu_j) * np.diff(nodes))
        assert gram == pytest.approx(apply_R(v, mu_i).values[j], abs=1e-14)
        errs.append(abs(gram - cov(nodes[i], nodes[j])))
    assert errs[1] < errs[0] / 3  # second order in the mesh


def test_volterra_incomplete_table():
    k = np.tril(np.ones((4, 4)))
    k[2, 1] = np.nan
    with pytest.raises(ValueError, match="incomplete"):
        Volterra(nodes=np.linspace(0, 1, 4), table=k)
    with pytest.raises(ValueError):
        Volterra(nodes=np.linspace(0, 1, 4), table=np.ones((3, 3)))


def test_volterra_csv_round_trip(tmp_path):
    v = Volterra.from_callable(lambda t, s: np.exp(-(t - s)), np.linspace(0, 1, 9))
    v.to_csv(tmp_path / "k.csv")
    back = Volterra.from_csv(tmp_path / "k.csv")
    np.testing.assert_array_equal(back.table, v.table)


@pytest.mark.parametrize("model", CLOSED_FORM + [indicator_volterra(17)], ids=repr)
def test_kernel_psd_and_mask(model):
    g = model.grid(9 if model.ndim == 2 else 17)
    assert is_positive_semidefinite(model, g)
    r = model.kernel_matrix(g)
    np.testing.assert_array_equal(np.diag(r).reshape(g.shape) == 0, g.zero_mask)


@pytest.mark.parametrize("model", CLOSED_FORM, ids=repr)
def test_reproducing_property(model):
    g = model.grid(7 if model.ndim == 2 else 13)
    pts = g.points()
    free = np.flatnonzero(~g.zero_mask.ravel())
    rng = np.random.default_rng(1)
    for a, b in rng.choice(free, size=(5, 2)):
        ea = np.zeros(g.size)
        eb = np.zeros(g.size)
        ea[a] = eb[b] = 1.0
        fa = apply_R(model, GridMeasure(g, ea.reshape(g.shape)))
        fb = apply_R(model, GridMeasure(g, eb.reshape(g.shape)))
        expected = kernel_eval(model, pts[a] if model.ndim == 2 else pts[a, 0], pts[b] if model.ndim == 2 else pts[b, 0])
        assert rkhs_inner(model, fa, fb) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("model", CLOSED_FORM, ids=repr)
@given(data=st.data())
def test_isometry(model, data):
    g = model.grid(5 if model.ndim == 2 else 9)
    raw = data.draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=g.size, max_size=g.size))
    atoms = np.where(g.zero_mask.ravel(), 0.0, raw).reshape(g.shape)
    mu = GridMeasure(g, atoms)
    quad = float(np.ravel(atoms) @ model.kernel_matrix(g) @ np.ravel(atoms))
    assert rkhs_norm_sq(model, apply_R(model, mu)) == pytest.approx(quad, abs=1e-9, rel=1e-9)


@given(st.lists(st.floats(0, 3, allow_nan=False), min_size=16, max_size=16))
def test_wiener_positive_cone_image_concave(raw):
    m = Wiener0b()
    g = m.grid(17)
    f = apply_R(m, GridMeasure(g, np.concatenate([[0.0], raw])))
    slopes = np.diff(f.values) / np.diff(g.nodes)
    assert np.all(slopes >= -1e-12) and np.all(np.diff(slopes) <= 1e-9)


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=15, max_size=15))
def test_bridge_representation_mean_zero(raw):
    m = BrownianBridge()
    g = m.grid(17)
    f = apply_R(m, GridMeasure(g, np.concatenate([[0.0], raw, [0.0]])))
    h = np.diff(f.values) / np.diff(g.nodes)
    assert abs(np.sum(h * np.diff(g.nodes))) < 1e-12


def test_model_from_dict():
    assert model_from_dict({"kind": "wiener", "b": 2}) == Wiener0b(b=2.0)
    assert isinstance(model_from_dict({"kind": "bridge"}), BrownianBridge)
    with pytest.raises(ValueError):
        model_from_dict({"kind": "fbm"})


@pytest.mark.parametrize("model", [Wiener0b(), BrownianBridge(), WienerAb0(-1.0, 1.0)], ids=repr)
def test_sample_shapes_and_zero_set(model):
    g = model.grid(11)
    x = model.sample(g, np.random.default_rng(0), 50)
    assert x.shape == (50, 11)
    assert not np.any(x[:, g.zero_mask])
