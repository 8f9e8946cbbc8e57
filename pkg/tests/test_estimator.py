"""Tests for the scikit-learn style transport estimator."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from otlab.errors import ValidationError
from otlab.estimator import MongeAmpereTransport
from otlab.fields import make_density
from otlab.geometry import TorusGrid
from otlab.transport import TransportPair, transport_map


def _pair_1d(amplitude=5e-3, nodes=64):
    grid = TorusGrid(periods=(2.0 * np.pi,), resolution=(nodes,))
    mu = make_density(grid, "uniform")
    nu = make_density(grid, "harmonic", amplitude=amplitude,
                      wavevector=(1,), phase=0.4)
    return grid, mu, nu


def _pair_2d(amplitude=5e-2, nodes=24):
    grid = TorusGrid(periods=(2.0 * np.pi, 2.0 * np.pi),
                     resolution=(nodes, nodes))
    mu = make_density(grid, "uniform")
    nu = make_density(grid, "harmonic", amplitude=amplitude,
                      wavevector=(1, 0), phase=1.1)
    return grid, mu, nu


class TestEstimatorContract:
    def test_get_params_round_trip(self):
        est = MongeAmpereTransport(newton_tol=1e-9, max_newton=7)
        params = est.get_params()
        assert params["newton_tol"] == 1e-9
        assert params["max_newton"] == 7
        est.set_params(dt_init=0.5)
        assert est.get_params()["dt_init"] == 0.5

    def test_clone_preserves_params(self):
        est = MongeAmpereTransport(cbar=2.0, dt_min=1e-4)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_transform_requires_fit(self):
        est = MongeAmpereTransport()
        with pytest.raises(NotFittedError):
            est.transform(np.zeros((3, 1)))

    def test_fit_rejects_pair_plus_density(self):
        grid, mu, nu = _pair_1d()
        pair = TransportPair(mu, nu)
        with pytest.raises(ValidationError):
            MongeAmpereTransport().fit(pair, nu)

    def test_fit_requires_target(self):
        _, mu, _ = _pair_1d()
        with pytest.raises(ValidationError):
            MongeAmpereTransport().fit(mu)

    def test_fit_returns_self_and_sets_attributes(self):
        grid, mu, nu = _pair_1d()
        est = MongeAmpereTransport()
        assert est.fit(mu, nu) is est
        assert est.n_features_in_ == 1
        assert est.potential_.values.shape == tuple(grid.resolution)
        assert est.certificate_ is not None
        assert est.result_.trace

    def test_fit_accepts_prebuilt_pair(self):
        grid, mu, nu = _pair_1d()
        direct = MongeAmpereTransport().fit(mu, nu)
        via_pair = MongeAmpereTransport().fit(TransportPair(mu, nu))
        np.testing.assert_allclose(via_pair.potential_.values,
                                   direct.potential_.values,
                                   rtol=0, atol=1e-14)


class TestTransform:
    def test_identity_pair_maps_points_to_themselves(self):
        grid, mu, _ = _pair_1d()
        est = MongeAmpereTransport().fit(mu, mu)
        X = np.linspace(0.1, 6.0, 9)[:, None]
        np.testing.assert_allclose(est.transform(X), X, atol=1e-10)

    def test_matches_node_map_field(self):
        # At grid nodes the spectral gradient used by transform and the
        # finite-difference gradient used by the node map field differ
        # by the stencil truncation error only.
        grid, mu, nu = _pair_2d()
        est = MongeAmpereTransport().fit(mu, nu)
        mf = transport_map(est.potential_)
        X = grid.coords.reshape(-1, 2)
        got = est.transform(X)
        diff = grid.geodesic_distance(got, mf.target.reshape(-1, 2))
        h = grid.periods[0] / grid.resolution[0]
        assert float(np.max(diff)) < h ** 2

    def test_output_wrapped_and_shape_preserved(self):
        grid, mu, nu = _pair_2d()
        est = MongeAmpereTransport().fit(mu, nu)
        X = np.array([[7.0, -1.0], [0.0, 0.0], [3.0, 9.4]])
        out = est.transform(X)
        assert out.shape == X.shape
        assert np.all(out >= 0.0) and np.all(out < 2.0 * np.pi)

    def test_rejects_wrong_feature_count(self):
        grid, mu, nu = _pair_1d()
        est = MongeAmpereTransport().fit(mu, nu)
        with pytest.raises(ValidationError):
            est.transform(np.zeros((4, 2)))

    def test_displacement_matches_transform_distance(self):
        grid, mu, nu = _pair_2d()
        est = MongeAmpereTransport().fit(mu, nu)
        rng = np.random.default_rng(0)
        X = rng.uniform(0.0, 2.0 * np.pi, size=(40, 2))
        moved = est.transform(X)
        np.testing.assert_allclose(est.displacement(X),
                                   grid.geodesic_distance(X, moved),
                                   rtol=0, atol=1e-12)

    def test_pushes_quantiles_toward_heavy_side(self):
        # Mass must flow from the uniform source toward the region
        # where the target density is largest.
        grid, mu, nu = _pair_1d(amplitude=0.2)
        est = MongeAmpereTransport().fit(mu, nu)
        peak = float(grid.coords[np.argmax(nu.log_values), 0])
        X = grid.coords.reshape(-1, 1)
        before = grid.geodesic_distance(X, np.full_like(X, peak))
        after = grid.geodesic_distance(est.transform(X),
                                       np.full_like(X, peak))
        assert np.mean(after) < np.mean(before)


class TestScore:
    def test_score_reflects_final_residual(self):
        grid, mu, nu = _pair_1d()
        est = MongeAmpereTransport().fit(mu, nu)
        assert -1e-9 < est.score() <= 0.0
