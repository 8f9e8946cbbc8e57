"""Scikit-learn style wrapper around the continuity-method solver.

``MongeAmpereTransport`` fits the transport potential between two
densities and then acts as a transformer: ``transform`` pushes chart
points through the fitted map ``x -> exp_x(grad u)``.  Construction
parameters mirror the solver configuration, so the estimator composes
with standard parameter-search tooling via ``get_params``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ValidationError
from .solver import SolverConfig, continuity_solve
from .transport import TransportPair


class MongeAmpereTransport(TransformerMixin, BaseEstimator):
    """Optimal-transport map estimator between two grid densities.

    Parameters default to the solver defaults; ``cbar`` optionally
    enforces the density-regularity budget at fit time, and ``ledger``
    attaches curvature-bound monitoring (granting or withholding the
    run certificate).
    """

    def __init__(self, cbar=None, ledger=None, newton_tol=1e-10,
                 max_newton=12, dt_init=1.0, dt_min=1e-6,
                 linear_tol=1e-10, armijo=0.1):
        self.cbar = cbar
        self.ledger = ledger
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.dt_init = dt_init
        self.dt_min = dt_min
        self.linear_tol = linear_tol
        self.armijo = armijo

    def _solver_config(self):
        return SolverConfig(
            newton_tol=self.newton_tol, max_newton=self.max_newton,
            dt_init=self.dt_init, dt_min=self.dt_min,
            linear_tol=self.linear_tol, armijo=self.armijo)

    def fit(self, mu, nu=None):
        """Solve for the potential carrying ``mu`` onto ``nu``.

        Accepts either two normalized densities on a common grid or a
        prebuilt ``TransportPair`` (with ``nu`` omitted).
        """
        if isinstance(mu, TransportPair):
            if nu is not None:
                raise ValidationError(
                    "pass either a pair or two densities, not both")
            pair = mu
        else:
            if nu is None:
                raise ValidationError("fit needs a target density")
            pair = TransportPair(mu, nu, cbar=self.cbar)
        result = continuity_solve(pair, self._solver_config(),
                                  ledger=self.ledger)
        self.pair_ = pair
        self.result_ = result
        self.potential_ = result.potential
        self.certificate_ = result.certificate
        self.n_features_in_ = pair.grid.dimension
        return self

    def _check_fitted(self):
        if not hasattr(self, "potential_"):
            raise NotFittedError(
                "this MongeAmpereTransport instance is not fitted yet")

    def _points(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"expected points of shape (m, {self.n_features_in_}), "
                f"got {X.shape}")
        return X

    def transform(self, X):
        """Chart coordinates of the transported points T(X)."""
        self._check_fitted()
        X = self._points(X)
        grid = self.pair_.grid
        X = grid.wrap(X)
        grad = self.potential_.interpolant.gradient_at(X)
        return grid.exp_map(X, grid.covector_to_frame(X, grad))

    def displacement(self, X):
        """Geodesic displacement length at each point of X."""
        self._check_fitted()
        X = self._points(X)
        grid = self.pair_.grid
        X = grid.wrap(X)
        grad = self.potential_.interpolant.gradient_at(X)
        v = grid.covector_to_frame(X, grad)
        return np.linalg.norm(v, axis=-1)

    def score(self, X=None, y=None):
        """Negative final sup-norm residual (higher is better)."""
        self._check_fitted()
        return -float(self.result_.trace[-1].residual_inf
                      if self.result_.trace else
                      self.result_.seed.residual_inf)
