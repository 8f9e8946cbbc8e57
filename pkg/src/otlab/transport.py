"""Transport maps, the modified Hessian field and residual diagnostics.

For a potential u the candidate optimal map is T(x) = exp_x(grad u) and
the modified Hessian is w = D^2 u + D^2_x c(x, T(x)); u is admissible
("c-convex" in the discrete sense) when w is positive definite at every
node.  The Monge-Ampere residual measures how far (T)_# mu is from the
path density in log form; the pushforward check measures the same thing
by actually depositing transported mass onto cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DisplacementTooLarge,
    JacobianSignFlip,
    NotCConvex,
    ValidationError,
)
from .fields import TorusGrid, fd_gradient, make_interpolant, path_density
from .geometry import SphereChartGrid, same_grid


class TransportPair:
    """Normalized source and target densities joined by the linear path.

    Caches the interpolants of the path log-density rho_t for the most
    recent path times, since Newton iterations evaluate the same time
    many times in a row.
    """

    _CACHE = 8

    def __init__(self, mu, nu, cbar=None):
        if not same_grid(mu.grid, nu.grid):
            raise ValidationError("pair densities live on different grids")
        if not (mu.normalized and nu.normalized):
            raise ValidationError("pair densities must be normalized")
        if mu.grid.injectivity_radius <= 2.0:
            raise ValidationError(
                "grid injectivity radius must exceed 2; apply "
                "normalize_manifold first")
        if cbar is not None:
            # The value part is centered: a log-density is defined up to
            # its normalization constant, which the budget should ignore.
            for name, field in (("mu", mu), ("nu", nu)):
                norm = field.c2(centered=True)
                if norm > cbar:
                    raise ValidationError(
                        f"{name} has C2 norm {norm:.4g} above the budget "
                        f"{cbar:.4g}")
        self.mu = mu
        self.nu = nu
        self.grid = mu.grid
        self.cbar = cbar
        self._rho_cache = {}

    def rho(self, t):
        t = float(t)
        if t not in self._rho_cache:
            if len(self._rho_cache) >= self._CACHE:
                self._rho_cache.pop(next(iter(self._rho_cache)))
            self._rho_cache[t] = path_density(self.mu, self.nu, t)
        return self._rho_cache[t]


@dataclass
class MapField:
    """Transport map data at grid nodes."""

    grid: object
    grad: np.ndarray          # chart covector Du, (*res, n)
    displacement: np.ndarray  # frame components of exp^{-1}_x T, (*res, n)
    target: np.ndarray        # chart coordinates of T(x), (*res, n)
    disp_norm: np.ndarray     # geodesic distance d(x, T(x)), (*res,)
    dual_residual: float      # sup |Du + D_x c(x, T)| in the frame


@dataclass
class WField:
    """Modified Hessian w and its frame spectrum."""

    grid: object
    w: np.ndarray             # chart components, (*res, n, n)
    frame: np.ndarray         # frame components, (*res, n, n)
    min_eig: np.ndarray       # (*res,)
    max_eig: np.ndarray       # (*res,)

    @property
    def positive(self):
        return bool(np.all(self.min_eig > 0))


def transport_map(u, check=True):
    """Map field T(x) = exp_x(grad u) with the defining-identity residual.

    Raises ``DisplacementTooLarge`` when any displacement reaches the
    injectivity radius (the map would stop being single-valued before
    that, so this is a hard failure).
    """
    grid = u.grid
    pts = grid.coords
    grad = fd_gradient(grid, u.values)
    v_frame = grid.covector_to_frame(pts, grad)
    disp_norm = np.linalg.norm(v_frame, axis=-1)
    max_disp = float(np.max(disp_norm))
    if check and max_disp >= grid.injectivity_radius * (1 - 1e-9):
        raise DisplacementTooLarge(
            f"max displacement {max_disp:.6g} reaches the injectivity "
            f"radius {grid.injectivity_radius:.6g}")
    target = grid.exp_map(pts, v_frame, check=check)
    ct = grid.cost_tensors(pts, target, order=2)
    resid = grid.covector_to_frame(pts, grad + ct.c_x)
    dual_residual = float(np.max(np.abs(resid)))
    return MapField(grid, grad, v_frame, target, disp_norm, dual_residual)


def hessian_metric(u, map_field=None, require_positive=False):
    """Modified Hessian w = D^2 u + D^2_x c(x, T(x)) and its spectrum.

    Eigenvalues are taken in the orthonormal frame, so ``max_eig`` is
    the largest value of w(e, e) over unit tangent vectors.
    """
    grid = u.grid
    if map_field is None:
        map_field = transport_map(u)
    hess = u.hessian()
    if isinstance(grid, TorusGrid):
        w = hess + np.eye(grid.dimension)
        frame = w
    else:
        ct = grid.cost_tensors(grid.coords, map_field.target, order=2)
        w = hess + ct.c_xx
        frame = grid.hessian_to_frame(grid.coords, w)
    sym = 0.5 * (frame + np.swapaxes(frame, -1, -2))
    eigs = np.linalg.eigvalsh(sym)
    field = WField(grid, w, frame, eigs[..., 0], eigs[..., -1])
    if require_positive and not field.positive:
        raise NotCConvex(
            f"w has minimum eigenvalue {float(np.min(field.min_eig)):.6g}")
    return field


def mae_residual(pair, u, t, map_field=None, w_field=None):
    """Log-form Monge-Ampere residual at grid nodes.

    F = log det w - zeta(x, T) - f(x) + g_t(T(x))
        - (1/2) [log det g(x) - log det g(T(x))]

    where zeta = log det(-c_xy) and the trailing term converts between
    the coordinate and Riemannian volume elements (both vanish on the
    torus).  Raises ``NotCConvex`` when w is not positive definite.
    """
    grid = pair.grid
    if map_field is None:
        map_field = transport_map(u)
    if w_field is None:
        w_field = hessian_metric(u, map_field)
    sign, logdet_w = np.linalg.slogdet(w_field.w)
    if np.any(sign <= 0):
        raise NotCConvex("w lost positivity while assembling the residual")
    rho = pair.rho(t)
    g_at_t = rho.at(map_field.target)
    out = logdet_w - pair.mu.log_values + g_at_t
    if not isinstance(grid, TorusGrid):
        pts = grid.coords
        zeta = grid._zeta(pts, map_field.target)
        out = out - zeta - 0.5 * (grid.metric_logdet(pts)
                                  - grid.metric_logdet(map_field.target))
    return out


@dataclass
class PushforwardReport:
    tv_error: float           # total variation between deposited and path mass
    jacobian_sup_error: float  # sup |det DT e^{g(T) - f} (vol factors) - 1|
    min_jacobian: float
    subsample: int


def _deposit_linear(grid, points, masses):
    """Cloud-in-cell deposit of point masses onto grid cells."""
    n = grid.dimension
    res = grid.resolution
    h = grid.spacing
    origin = [ax[0] for ax in grid.axes()]
    rel = [(points[:, a] - origin[a]) / h[a] for a in range(n)]
    base = [np.floor(r).astype(int) for r in rel]
    frac = [r - b for r, b in zip(rel, base)]
    out = np.zeros(res)
    for corner in range(1 << n):
        idx = []
        weight = masses.copy()
        for a in range(n):
            hi = (corner >> a) & 1
            j = base[a] + hi
            weight = weight * (frac[a] if hi else 1.0 - frac[a])
            if grid.periodic[a]:
                j = np.mod(j, res[a])
            else:
                j = np.clip(j, 0, res[a] - 1)
            idx.append(j)
        np.add.at(out, tuple(idx), weight)
    return out


def pushforward_error(pair, u, t, subsample=2, map_field=None):
    """Mass-deposit fidelity of T pushing mu onto the path density.

    Source mass is sampled on a ``subsample``-times finer grid through
    the interpolants of u and f, moved by the map, and deposited onto
    the coarse cells with linear weights; the total-variation error
    compares against the path-density cell masses.  The Jacobian check
    differentiates the displacement field at the nodes and raises
    ``JacobianSignFlip`` if det DT changes sign.
    """
    if subsample < 1:
        raise ValidationError("subsample must be at least 1")
    grid = pair.grid
    if map_field is None:
        map_field = transport_map(u)

    if isinstance(grid, TorusGrid):
        fine = TorusGrid(grid.periods,
                         tuple(r * subsample for r in grid.resolution))
    else:
        fine = SphereChartGrid(radius=grid.radius, theta_max=grid.theta_max,
                               resolution=tuple(r * subsample
                                                for r in grid.resolution))
    fine_pts = fine.flat_coords()
    grad_fine = u.interpolant.gradient_at(fine_pts)
    v_frame = grid.covector_to_frame(fine_pts, grad_fine)
    targets = grid.exp_map(fine_pts, v_frame, check=False)
    f_fine = pair.mu.interpolant.values_at(fine_pts)
    masses = np.exp(f_fine) * fine.cell_volumes().reshape(-1)
    deposited = _deposit_linear(grid, grid.wrap(targets), masses)
    rho = pair.rho(t)
    tv = 0.5 * float(np.sum(np.abs(deposited - rho.cell_masses())))

    # Jacobian fidelity at the nodes, from the chart displacement field
    # (periodic axes unwrapped so the field is smooth across seams).
    pts = grid.coords
    delta = map_field.target - pts
    for a in range(grid.dimension):
        if grid.periodic[a]:
            p = (grid.periods[a] if isinstance(grid, TorusGrid)
                 else 2.0 * np.pi)
            delta[..., a] = np.mod(delta[..., a] + p / 2, p) - p / 2
    n = grid.dimension
    jac = np.empty(tuple(grid.resolution) + (n, n))
    for comp in range(n):
        jac[..., comp, :] = fd_gradient(grid, delta[..., comp])
    jac += np.eye(n)
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        raise JacobianSignFlip(
            f"det DT reaches {float(np.min(det)):.6g}; the discrete map folds")
    log_jacobian = (np.log(det) + rho.at(map_field.target)
                    - pair.mu.log_values)
    if not isinstance(grid, TorusGrid):
        log_jacobian += 0.5 * (grid.metric_logdet(map_field.target)
                               - grid.metric_logdet(pts))
    sup_err = float(np.max(np.abs(np.expm1(log_jacobian))))
    return PushforwardReport(tv, sup_err, float(np.min(det)), subsample)
