import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpcross.bounds import (
    BoundsReport,
    CertificateError,
    asymptote,
    asymptote_series,
    boundary_sequence,
    general_lower_bound_log,
    lower_bound_log,
    theta,
    upper_bound_log,
)
from gpcross.grid import GridFunction, GridMeasure
from gpcross.models import BrownianBridge, Wiener0b
from gpcross.oracles import wiener_band_eigen
from gpcross.projection import project_onto_cone


def tent(t):
    return np.where(t <= 0.5, 2 * t, 2 - 2 * t)


@pytest.fixture
def tent_projection():
    m = Wiener0b()
    g = m.grid(33)
    return project_onto_cone(m, g, GridFunction(g, tent(g.nodes)))


def test_theta_examples(tent_projection):
    g = tent_projection.grid
    assert theta(tent_projection.gamma_tilde, GridFunction(g, np.ones(g.size))) == pytest.approx(2.0, abs=1e-12)
    assert theta(GridMeasure.zeros(g), GridFunction(g, np.ones(g.size))) == 0.0
    b = BrownianBridge()
    gb = b.grid(33)
    rb = project_onto_cone(b, gb, GridFunction(gb, tent(gb.nodes)))
    assert theta(rb.gamma_tilde, GridFunction(gb, 1 + gb.nodes)) == pytest.approx(6.0, abs=1e-9)
    with pytest.raises(ValueError):
        theta(GridMeasure(g, -tent_projection.gamma_tilde.atoms), GridFunction(g, np.ones(g.size)))


def test_upper_bound_examples(tent_projection):
    cert = tent_projection.certificates
    assert upper_bound_log(2.0, 2.0, certificates=cert) == 1.0
    assert upper_bound_log(9 * 2.0, 3 * 2.0) == -3.0
    assert upper_bound_log(0.0, 0.0, log_ref=-0.4) == -0.4


def test_upper_bound_needs_certificates(tent_projection):
    import dataclasses

    bad = dataclasses.replace(tent_projection.certificates, g1_min_atom=-1.0)
    with pytest.raises(CertificateError):
        upper_bound_log(2.0, 2.0, certificates=bad)


def test_lower_bound_examples(tent_projection):
    p_band = wiener_band_eigen(1.0)
    assert p_band == pytest.approx(0.37078, abs=1e-5)
    lb = lower_bound_log(2.0, -2.0, math.log(p_band), certificates=tent_projection.certificates)
    assert lb == pytest.approx(math.log(p_band) - 3.0, abs=1e-15)
    assert lb == pytest.approx(-3.992, abs=1e-3)
    assert lower_bound_log(0.0, 0.0, -0.7) == -0.7
    with pytest.raises(ValueError):
        lower_bound_log(2.0, -2.0, -math.inf)
    g = tent_projection.grid
    u = GridFunction(g, np.ones(g.size))
    with pytest.raises(ValueError):
        lower_bound_log(2.0, -2.0, -1.0, u=u, u_minus=u)


def test_lower_bound_increases_along_approximating_sequence(tent_projection):
    g = tent_projection.grid
    u = GridFunction(g, np.ones(g.size))
    vals = []
    for n in (1, 2, 4, 8, 16):
        un = boundary_sequence(u, n)
        assert np.all(un.values < u.values)
        vals.append(lower_bound_log(2.0, theta(tent_projection.gamma_tilde, un), -1.0))
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] < upper_bound_log(2.0, 2.0, log_ref=-1.0)


def test_boundary_sequence_needs_positive_u_on_zero_set():
    g = Wiener0b().grid(5)
    with pytest.raises(ValueError):
        boundary_sequence(GridFunction(g, g.nodes - 0.5), 3)


def test_general_lower_examples():
    assert general_lower_bound_log(0.0, -0.3) == -0.3
    v = general_lower_bound_log(2.0, math.log(0.5))
    assert v == pytest.approx(math.log(0.5) - 1 - math.sqrt(2) * math.sqrt(2 * math.log(2)), abs=1e-15)
    assert v == pytest.approx(-3.358, abs=1e-3)
    for bad in (0.0, 0.1, -math.inf):
        with pytest.raises(ValueError):
            general_lower_bound_log(2.0, bad)


@given(st.floats(0, 50), st.floats(-10, 10), st.floats(-20, -1e-6))
def test_general_lower_below_upper(norm_sq, th, log_ref):
    # the upper bound with non-negative Theta-side drift term and the same reference
    assert general_lower_bound_log(norm_sq, log_ref) <= upper_bound_log(norm_sq, abs(th), log_ref) + 1e-12


def test_asymptote_examples():
    np.testing.assert_array_equal(asymptote_series(2.0, 2.0, [1, 2, 3]), [1, 0, -3])
    np.testing.assert_array_equal(asymptote_series(0.0, 1.5, [1, 2, 4]), [1.5, 3, 6])
    a, res = asymptote_series(2.0, 2.0, [1, 2], log_p=[-1.0, -4.0])
    np.testing.assert_array_equal(res, [-2.0, -2.0])
    with pytest.raises(ValueError):
        asymptote_series(-1.0, 0.0, [1])


def test_asymptote_fixed_point_case():
    # f = R(delta_1) on Wiener: gamma~ = delta_1, so norm 1 and Theta(u = 1) = 1
    m = Wiener0b()
    g = m.grid(17)
    r = project_onto_cone(m, g, GridFunction(g, g.nodes.copy()))
    assert r.norm_sq == pytest.approx(1.0, abs=1e-12)
    th = theta(r.gamma_tilde, GridFunction(g, np.ones(g.size)))
    np.testing.assert_allclose(asymptote_series(r.norm_sq, th, [1, 2]), [0.5, 0.0], atol=1e-12)


@given(st.floats(0.1, 10), st.floats(0.01, 10))
def test_asymptote_strictly_concave(norm_sq, h):
    c = np.array([1.0, 1.0 + h, 1.0 + 2 * h])
    a = asymptote(norm_sq, 0.7, c)
    assert a[0] + a[2] < 2 * a[1]


@given(st.floats(0.05, 20))
def test_scaling_law(c):
    m = Wiener0b()
    g = m.grid(33)
    f = GridFunction(g, tent(g.nodes) + 0.2 * np.sin(9 * g.nodes))
    r1 = project_onto_cone(m, g, f, check=False)
    rc = project_onto_cone(m, g, f * c, check=False)
    np.testing.assert_allclose(rc.f_tilde.values, c * r1.f_tilde.values, atol=1e-9 * max(1, c))
    np.testing.assert_allclose(rc.gamma_tilde.atoms, c * r1.gamma_tilde.atoms, atol=1e-9 * max(1, c))
    assert rc.norm_sq == pytest.approx(c**2 * r1.norm_sq, rel=1e-9)


@given(st.lists(st.floats(-3, 3), min_size=33, max_size=33), st.lists(st.floats(0, 2), min_size=33, max_size=33))
def test_theta_monotone_in_u(u, bump):
    g = Wiener0b().grid(33)
    atoms = np.where(g.zero_mask, 0.0, np.abs(np.array(u)))
    mu = GridMeasure(g, atoms)
    lo = GridFunction(g, np.array(u))
    hi = GridFunction(g, np.array(u) + np.array(bump))
    assert theta(mu, hi) >= theta(mu, lo) - 1e-12


@given(st.floats(0.1, 5), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 5))
def test_sandwich_ordering(norm_sq, th_u, gap, c):
    th_minus = th_u - abs(gap)
    log_band = -1.0
    lo = lower_bound_log(c * c * norm_sq, c * th_minus, log_band)
    hi = upper_bound_log(c * c * norm_sq, c * th_u, 0.0)
    assert lo <= hi


def test_general_lower_quadratic_rate():
    vals = [general_lower_bound_log(c * c * 2.0, math.log(0.5)) / (c * c) for c in (1, 4, 16, 64)]
    assert all(abs(v + 1.0) > abs(w + 1.0) for v, w in zip(vals, vals[1:]))
    assert abs(vals[-1] + 1.0) < 0.03


def test_report_csv_format(tmp_path):
    rep = BoundsReport(2.0, 2.0, -2.0, [0.5, 1.0], log_band=math.log(0.37))
    rep.mc_log_estimate = np.array([-0.6, np.nan])
    rep.to_csv(tmp_path / "b.csv")
    raw = (tmp_path / "b.csv").read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "c,asymptote,upper,lower,general_lower,mc_log_estimate,mc_ci_low,mc_ci_high"
    first = lines[1].split(",")
    assert first[0] == "5.00000000000000e-01"
    assert len(first[0].split("e")[0].replace(".", "")) == 15
    assert first[4] == "" and lines[2].split(",")[5] == ""
    d = rep.to_dict()
    assert d["mc_log_estimate"][1] is None and d["norm_sq"] == 2.0
    np.testing.assert_allclose(rep.log_lower(), math.log(0.37) - 0.5 * np.array([0.25, 1]) * 2 + np.array([0.5, 1]) * -2)
