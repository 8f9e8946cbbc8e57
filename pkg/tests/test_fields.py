"""Density fields, finite differences and off-grid interpolation."""

import numpy as np
import pytest

from otlab.errors import ValidationError
from otlab.fields import (
    DensityField,
    FourierInterpolant,
    Potential,
    c2_norm,
    density_to_csv,
    fd_gradient,
    fd_hessian,
    load_density_csv,
    make_density,
    make_interpolant,
    mean_zero_project,
    normalize_density,
    path_density,
    sup_gradient_norm,
)
from otlab.geometry import SphereChartGrid, TorusGrid


def torus2(res=32, period=2 * np.pi):
    return TorusGrid((period, period), (res, res))


# -- finite differences ---------------------------------------------------


def test_fd_gradient_torus_oracle():
    errors = []
    for res in (16, 32):
        g = torus2(res)
        x, y = g.coords[..., 0], g.coords[..., 1]
        f = np.cos(x) * np.sin(2 * y)
        grad = fd_gradient(g, f)
        exact_x = -np.sin(x) * np.sin(2 * y)
        exact_y = 2 * np.cos(x) * np.cos(2 * y)
        errors.append(max(np.max(np.abs(grad[..., 0] - exact_x)),
                          np.max(np.abs(grad[..., 1] - exact_y))))
    # Second-order convergence: halving h divides the error by ~4.
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.3)


def test_fd_hessian_torus_oracle():
    errors = []
    for res in (24, 48):
        g = torus2(res)
        x, y = g.coords[..., 0], g.coords[..., 1]
        f = np.cos(x + 2 * y)
        hess = fd_hessian(g, f)
        exact = -np.cos(x + 2 * y)
        err = max(np.max(np.abs(hess[..., 0, 0] - exact)),
                  np.max(np.abs(hess[..., 0, 1] - 2 * exact)),
                  np.max(np.abs(hess[..., 1, 1] - 4 * exact)))
        errors.append(err)
        assert np.array_equal(hess[..., 0, 1], hess[..., 1, 0])
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.3)


def test_fd_bounded_axis():
    g = SphereChartGrid(radius=1.0, theta_max=0.3, resolution=(16, 32))
    theta = g.coords[..., 1]
    f = theta ** 3
    grad = fd_gradient(g, f)
    hess = fd_hessian(g, f)
    assert np.allclose(grad[..., 1], 3 * theta ** 2, atol=2e-3)
    assert np.allclose(hess[..., 1, 1], 6 * theta, atol=2e-2)
    assert np.allclose(grad[..., 0], 0.0, atol=1e-12)


# -- interpolation --------------------------------------------------------


def test_fourier_interpolant_node_exactness():
    g = torus2(16)
    rng = np.random.default_rng(2)
    vals = rng.normal(size=g.resolution)
    interp = FourierInterpolant(g, vals)
    back = interp.values_at(g.flat_coords()).reshape(g.resolution)
    assert np.max(np.abs(back - vals)) < 1e-12


def test_fourier_interpolant_band_limited_exact():
    g = TorusGrid((2.0,), (16,))
    x = g.coords[..., 0]
    vals = np.cos(2 * np.pi * 3 * x / 2.0 + 0.4)
    interp = FourierInterpolant(g, vals)
    q = np.linspace(0, 2, 101)[:, None]
    assert np.allclose(interp.values_at(q),
                       np.cos(2 * np.pi * 3 * q[:, 0] / 2.0 + 0.4), atol=1e-12)
    k = 2 * np.pi * 3 / 2.0
    assert np.allclose(interp.gradient_at(q)[:, 0],
                       -k * np.sin(k * q[:, 0] + 0.4), atol=1e-11)


def test_fourier_interpolant_gradient_consistency():
    # The reported gradient must be the derivative of the interpolant:
    # the Taylor remainder has to shrink quadratically.
    g = torus2(16)
    rng = np.random.default_rng(4)
    vals = rng.normal(size=g.resolution)
    interp = FourierInterpolant(g, vals)
    base = np.array([[1.234, 2.345]])
    direction = np.array([[0.6, -0.8]])
    v0, g0 = interp.values_and_gradient_at(base)
    rem = []
    eps_list = [1e-2, 1e-3, 1e-4]
    for eps in eps_list:
        v1 = interp.values_at(base + eps * direction)
        rem.append(abs(v1[0] - v0[0] - eps * float(np.sum(g0 * direction))))
    slope = np.polyfit(np.log(eps_list), np.log(rem), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_fourier_interpolant_3d():
    g = TorusGrid((1.0, 1.0, 1.0), (8, 8, 8))
    x = g.coords
    vals = np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 2])
    interp = FourierInterpolant(g, vals)
    q = np.array([[0.17, 0.53, 0.81]])
    expect = np.sin(2 * np.pi * 0.17) * np.cos(2 * np.pi * 0.81)
    assert interp.values_at(q)[0] == pytest.approx(expect, abs=1e-12)


def test_spline_interpolant_sphere():
    g = SphereChartGrid(radius=1.0, theta_max=0.3, resolution=(48, 24))
    pts = g.coords
    vals = np.cos(pts[..., 0]) * np.exp(pts[..., 1])
    interp = make_interpolant(g, vals)
    q = np.array([[0.37, 0.11], [6.0, -0.21]])
    expect = np.cos(q[:, 0]) * np.exp(q[:, 1])
    assert np.allclose(interp.values_at(q), expect, atol=1e-7)
    gphi = -np.sin(q[:, 0]) * np.exp(q[:, 1])
    assert np.allclose(interp.gradient_at(q)[:, 0], gphi, atol=1e-5)
    # Periodic seam: phi slightly below 2 pi matches slightly above 0.
    seam = interp.values_at(np.array([[2 * np.pi - 1e-6, 0.1], [1e-6, 0.1]]))
    assert seam[0] == pytest.approx(seam[1], abs=1e-9)


# -- densities -----------------------------------------------------------


def test_uniform_density_mass():
    g = torus2(16, period=3.0)
    mu = make_density(g, "uniform")
    assert mu.normalized
    assert mu.mass() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(mu.log_values, -np.log(9.0))


def test_normalize_idempotent():
    g = torus2(16)
    raw = DensityField(g, np.linspace(0, 1, g.n_nodes).reshape(g.resolution))
    mu = normalize_density(raw)
    again = normalize_density(mu)
    assert abs(mu.mass() - 1.0) <= 1e-12
    assert np.allclose(mu.log_values, again.log_values, atol=1e-14)


def test_cosine_bump_density():
    g = torus2(32)
    mu = make_density(g, "cosine_bump", center=(np.pi, np.pi),
                      width=np.pi, amplitude=0.5)
    assert abs(mu.mass() - 1.0) <= 1e-12
    # Too narrow a bump for the grid band limit must be rejected.
    with pytest.raises(ValidationError):
        make_density(torus2(8), "cosine_bump", center=(0.0, 0.0),
                     width=0.5, amplitude=0.5)


def test_harmonic_density():
    g = TorusGrid((2 * np.pi,), (64,))
    mu = make_density(g, "harmonic", wavevector=(2,), amplitude=0.1,
                      normalize=False)
    x = g.coords[..., 0]
    assert np.allclose(mu.log_values, 0.1 * np.cos(2 * x), atol=1e-14)
    with pytest.raises(ValidationError):
        make_density(g, "harmonic", wavevector=(40,), amplitude=0.1)


def test_gaussian_bump_on_both_kinds():
    g = torus2(32)
    mu = make_density(g, "gaussian_bump", center=(3.0, 3.0), width=0.8,
                      amplitude=0.4)
    assert abs(mu.mass() - 1.0) <= 1e-12
    s = SphereChartGrid(radius=2.0, theta_max=0.3, resolution=(32, 8))
    nu = make_density(s, "gaussian_bump", center=(np.pi, 0.0), width=0.5,
                      amplitude=0.4)
    assert abs(nu.mass() - 1.0) <= 1e-12


def test_path_density_endpoints_and_mass():
    g = torus2(24)
    mu = make_density(g, "uniform")
    nu = make_density(g, "gaussian_bump", center=(1.0, 2.0), width=0.9,
                      amplitude=0.6)
    assert path_density(mu, nu, 0.0) is mu
    assert path_density(mu, nu, 1.0) is nu
    for t in (0.25, 0.5, 0.9):
        rho = path_density(mu, nu, t)
        assert abs(rho.mass() - 1.0) <= 1e-12
    with pytest.raises(ValidationError):
        path_density(mu, nu, 1.5)


def test_mean_zero_project():
    g = torus2(16)
    mu = make_density(g, "gaussian_bump", center=(2.0, 2.0), width=1.0,
                      amplitude=0.5)
    rng = np.random.default_rng(6)
    vals = rng.normal(size=g.resolution)
    pot = mean_zero_project(g, vals, mu)
    assert pot.gauge <= 1e-12
    w = mu.cell_masses()
    assert abs(float(np.sum(pot.values * w / w.sum()))) <= 1e-12
    # Projecting again changes nothing.
    again = mean_zero_project(pot, mu)
    assert np.allclose(again.values, pot.values, atol=1e-14)


def test_c2_norm_harmonic_oracle():
    # f = a cos(x) on period 2 pi: value, gradient and Hessian sups
    # are all a, so the norm approaches 3 a under refinement.
    g = TorusGrid((2 * np.pi,), (128,))
    f = 0.3 * np.cos(g.coords[..., 0])
    assert c2_norm(g, f) == pytest.approx(0.9, rel=2e-3)
    assert sup_gradient_norm(g, f) == pytest.approx(0.3, rel=2e-3)
    assert c2_norm(g, np.zeros(g.resolution)) == 0.0


def test_density_csv_round_trip(tmp_path):
    g = torus2(8)
    mu = make_density(g, "gaussian_bump", center=(2.0, 4.0), width=1.1,
                      amplitude=0.3)
    path = tmp_path / "mu.csv"
    density_to_csv(mu, path)
    back = load_density_csv(g, path)
    assert np.allclose(back.log_values, mu.log_values, atol=1e-15)
    # Wrong grid size is rejected.
    with pytest.raises(ValidationError):
        load_density_csv(torus2(16), path)


def test_potential_shape_checks():
    g = torus2(8)
    with pytest.raises(ValidationError):
        Potential(g, np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        DensityField(g, np.full(g.resolution, np.inf))
