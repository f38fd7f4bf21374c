import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gpcross.estimators import BoundaryNonCrossing, ConeProjection
from gpcross.models import BrownianBridge, Wiener0b


def rows(n=33):
    t = np.linspace(0, 1, n)
    return np.vstack([np.minimum(2 * t, 2 - 2 * t), t - t * t, t])


def test_cone_projection_fit_transform():
    X = rows()
    est = ConeProjection()
    out = est.fit_transform(X)
    t = np.linspace(0, 1, 33)
    np.testing.assert_allclose(out[0], np.minimum(2 * t, 1), atol=1e-12)
    np.testing.assert_allclose(out[2], t, atol=1e-15)
    assert est.norm_sq_[0] == pytest.approx(2.0) and est.norm_sq_[2] == pytest.approx(1.0)
    assert np.all(out >= X - 1e-12)
    assert est.gamma_.shape == X.shape


def test_cone_projection_qp_route_agrees():
    X = rows()
    a = ConeProjection(method="majorant").fit_transform(X)
    b = ConeProjection(method="qp").fit_transform(X)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_cone_projection_params_and_errors():
    est = ConeProjection(model=BrownianBridge(), max_iter=50)
    assert est.get_params() == {"model": BrownianBridge(), "method": "auto", "max_iter": 50}
    c = clone(est).set_params(method="qp")
    assert c.method == "qp" and est.method == "auto"
    with pytest.raises(NotFittedError):
        est.transform(rows())
    est.fit(rows()[:2] * np.array([1] * 32 + [0]))
    with pytest.raises(ValueError):
        est.transform(rows(17))
    with pytest.raises(ValueError):
        ConeProjection(method="lp").fit(rows())
    with pytest.raises(ValueError):
        ConeProjection().fit(np.array([[0.0, np.nan, 1.0]]))


def test_boundary_noncrossing_predict_and_bounds():
    t = np.linspace(0, 1, 33)
    est = BoundaryNonCrossing(boundary=1.0, lower_boundary=-1.0).fit(np.minimum(2 * t, 2 - 2 * t))
    assert est.norm_sq_ == pytest.approx(2.0) and est.theta_u_ == pytest.approx(2.0)
    assert est.theta_u_minus_ == pytest.approx(-2.0)
    np.testing.assert_allclose(est.predict([1, 2, 3]), [1, 0, -3], atol=1e-12)
    rep = est.bounds([1.0], log_band=math.log(0.37))
    assert rep.log_lower()[0] == pytest.approx(math.log(0.37) - 3)
    assert rep.log_upper()[0] == pytest.approx(1.0)


def test_boundary_noncrossing_callable_boundary():
    t = np.linspace(0, 1, 33)
    est = BoundaryNonCrossing(model=Wiener0b(), boundary=lambda s: 1 + s).fit(t)
    assert est.theta_u_ == pytest.approx(2.0)
    with pytest.raises(NotFittedError):
        BoundaryNonCrossing().predict([1.0])
    with pytest.raises(ValueError):
        BoundaryNonCrossing().fit(rows())
