"""scikit-learn style wrappers around the projection and the bounds.

Drifts are passed as rows of node values on ``model.grid(n_features)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bounds import BoundsReport, asymptote
from .grid import GridFunction
from .models import Wiener0b
from .projection import project


def _boundary_values(spec, grid, name):
    if spec is None:
        return None
    if callable(spec):
        v = np.asarray(spec(grid.nodes), dtype=float) * np.ones(grid.shape)
    else:
        v = np.broadcast_to(np.asarray(spec, dtype=float), grid.shape).astype(float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite on the grid")
    return GridFunction(grid, v)


class ConeProjection(TransformerMixin, BaseEstimator):
    """Map each drift to the minimal-norm RKHS element dominating it.

    Parameters
    ----------
    model : process model with a ``grid(n)`` method, default ``Wiener0b()``.
    method : ``"auto"``, ``"majorant"`` or ``"qp"``.
    max_iter : active-set iteration cap for the QP route.

    After ``fit`` the per-row squared norms and representing measures are in
    ``norm_sq_`` and ``gamma_``.
    """

    def __init__(self, model=None, method="auto", max_iter=None):
        self.model = model
        self.method = method
        self.max_iter = max_iter

    def _project_rows(self, X):
        kw = {} if self.max_iter is None else {"max_iter": self.max_iter}
        return [project(self.model_, self.grid_, GridFunction(self.grid_, row), method=self.method, **kw) for row in X]

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_features=2)
        if self.method not in ("auto", "majorant", "qp"):
            raise ValueError(f"unknown method {self.method!r}")
        self.model_ = Wiener0b() if self.model is None else self.model
        if getattr(self.model_, "ndim", 1) != 1:
            raise ValueError("the estimator API covers one-dimensional models")
        self.grid_ = self.model_.grid(X.shape[1])
        self.n_features_in_ = X.shape[1]
        res = self._project_rows(X)
        self.norm_sq_ = np.array([r.norm_sq for r in res])
        self.gamma_ = np.array([r.gamma_tilde.atoms for r in res])
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} node values per row, got {X.shape[1]}")
        return np.array([r.f_tilde.values for r in self._project_rows(X)])


class BoundaryNonCrossing(BaseEstimator):
    """Two-term asymptote and bounds for ``P(X + c f <= u)`` as ``c`` varies.

    ``fit`` takes the node values of one drift ``f``. ``predict(c)`` gives
    the asymptote ``-c^2/2 |f~|^2 + c Theta(u)`` and ``bounds(c)`` the full
    BoundsReport.
    """

    def __init__(self, model=None, boundary=1.0, lower_boundary=None, method="auto"):
        self.model = model
        self.boundary = boundary
        self.lower_boundary = lower_boundary
        self.method = method

    def fit(self, X, y=None):
        f = check_array(np.atleast_2d(np.asarray(X, dtype=float)), dtype=float, ensure_min_features=2)
        if f.shape[0] != 1:
            raise ValueError("fit takes a single drift")
        proj = ConeProjection(self.model, self.method).fit(f)
        self.model_, self.grid_, self.n_features_in_ = proj.model_, proj.grid_, proj.n_features_in_
        self.projection_ = project(self.model_, self.grid_, GridFunction(self.grid_, f[0]), method=self.method)
        self.norm_sq_ = float(self.projection_.norm_sq)
        atoms = self.projection_.gamma_tilde.atoms
        u = _boundary_values(self.boundary, self.grid_, "boundary")
        self.theta_u_ = float(np.sum(atoms * u.values))
        um = _boundary_values(self.lower_boundary, self.grid_, "lower_boundary")
        self.theta_u_minus_ = float(np.sum(atoms * um.values)) if um is not None else float("nan")
        return self

    def predict(self, c):
        check_is_fitted(self, "norm_sq_")
        return asymptote(self.norm_sq_, self.theta_u_, np.asarray(c, dtype=float))

    def bounds(self, c, log_ref=0.0, log_band=float("nan")):
        check_is_fitted(self, "norm_sq_")
        return BoundsReport(self.norm_sq_, self.theta_u_, self.theta_u_minus_, np.atleast_1d(c), log_ref, log_band)


__all__ = ["BoundaryNonCrossing", "ConeProjection"]
