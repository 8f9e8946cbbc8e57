"""Grids on compact manifolds and derivatives of the squared-distance cost.

Two grid kinds are supported:

* ``TorusGrid`` -- flat torus of dimension 1..3 with per-axis periods,
  uniform node spacing, all cost derivatives in closed form.
* ``SphereChartGrid`` -- an equatorial band of the round 2-sphere in
  (phi, theta) chart coordinates, periodic in phi, cell-centred in theta.
  Cost derivatives of order <= 2 are closed form; orders 3 and 4 come
  from centred differences of the closed-form second derivatives.

Points are arrays whose last axis has length ``dimension``; every
operation broadcasts over leading axes.  Tangent vectors are expressed
in the orthonormal frame attached to the chart (on the torus the frame
is the coordinate basis itself).
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import (
    ChartEquivalenceError,
    CutLocusProximity,
    ValidationError,
    VectorTooLong,
)

# Euclidean-equivalence band required of every chart: for any tangent
# vector, the frame components must satisfy
#   0.9 |xi|^2 <= sum_i (xi_i)^2 <= 1.1 |xi|^2
# after recentring the frame anywhere within the working region.
CHART_EQUIV_LOW = 0.9
CHART_EQUIV_HIGH = 1.1

# Finite-difference step (chart radians) for sphere derivatives of
# order >= 3 and for the log-det factor zeta.
_FD_STEP = 1.0e-4

# Geodesic distances within this value of zero are treated as diagonal
# when assembling sphere cost derivatives.
_DIAG_TOL = 1.0e-8


class CostTensors:
    """Derivatives of c(x, y) = d(x, y)^2 / 2 at a batch of point pairs.

    Unbarred indices differentiate in x, barred ones in y; the naming
    uses ``x`` and ``y`` suffixes in that order.  Shapes broadcast over
    the leading batch axes of the inputs:

    ``c``       (...,)          cost value
    ``c_x``     (..., n)        first derivatives in x
    ``c_xx``    (..., n, n)     second derivatives in x
    ``c_xy``    (..., n, n)     mixed second derivatives (row x, col y)
    ``c_xxx``   (..., n, n, n)  third, all in x
    ``c_xxy``   (..., n, n, n)  third, last index barred
    ``c_xyy``   (..., n, n, n)  third, last two indices barred
    ``c_xxxy``  (..., n, n, n, n) fourth, last index barred
    ``zeta*``   log det(-c_xy) and its first/second derivatives

    Orders above the requested one are ``None``.
    """

    __slots__ = (
        "c", "c_x", "c_xx", "c_xy",
        "c_xxx", "c_xxy", "c_xyy", "c_xxxy",
        "zeta", "zeta_x", "zeta_y", "zeta_xx", "zeta_xy", "zeta_yy",
    )

    def __init__(self, **fields):
        for name in self.__slots__:
            setattr(self, name, fields.get(name))

    @property
    def neg_cxy(self):
        """-c_xy, the positive-definite mixed block."""
        return -self.c_xy


def _as_points(x, dimension):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if dimension != 1:
            raise ValidationError(
                f"scalar point given for a {dimension}-dimensional grid")
        return x.reshape(1)
    if x.shape[-1] != dimension:
        raise ValidationError(
            f"points must have last axis {dimension}, got shape {x.shape}")
    return x


class ManifoldGrid:
    """Common machinery shared by the concrete grid kinds."""

    kind: str
    dimension: int
    resolution: tuple
    scale: float

    # -- coordinates -------------------------------------------------

    def axes(self):
        raise NotImplementedError

    @cached_property
    def coords(self):
        """Node coordinates, shape (*resolution, dimension)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def n_nodes(self):
        return int(np.prod(self.resolution))

    def flat_coords(self):
        return self.coords.reshape(-1, self.dimension)

    # -- metric ------------------------------------------------------

    def metric_diag(self, points):
        """Diagonal of the metric in chart coordinates at ``points``."""
        raise NotImplementedError

    def frame_diag(self, points):
        """Diagonal of the frame matrix E (columns = orthonormal basis
        expressed in chart coordinates); the metric is (E E^T)^{-1}."""
        return 1.0 / np.sqrt(self.metric_diag(points))

    def metric_logdet(self, points):
        return np.sum(np.log(self.metric_diag(points)), axis=-1)

    def covector_to_frame(self, points, covec):
        """Frame components of a chart covector (equal to the frame
        components of the metric gradient it represents)."""
        return covec * self.frame_diag(points)

    def frame_to_vector(self, points, v_frame):
        """Chart components of a tangent vector given in the frame."""
        return v_frame * self.frame_diag(points)

    def hessian_to_frame(self, points, hess):
        """Frame components E^T H E of a chart-coordinate bilinear form."""
        e = self.frame_diag(points)
        return hess * e[..., :, None] * e[..., None, :]

    # -- misc --------------------------------------------------------

    def cell_volumes(self):
        raise NotImplementedError

    @property
    def injectivity_radius(self):
        raise NotImplementedError

    @property
    def diameter(self):
        raise NotImplementedError

    def distance_matrix(self, x, y):
        """Pairwise geodesic distances, shape (len(x), len(y))."""
        x = _as_points(x, self.dimension)
        y = _as_points(y, self.dimension)
        return self.geodesic_distance(x[:, None, :], y[None, :, :])


class TorusGrid(ManifoldGrid):
    """Flat torus R^n / (P_1 Z x .. x P_n Z) sampled on a uniform grid."""

    kind = "torus"

    def __init__(self, periods, resolution, scale=1.0):
        periods = tuple(float(p) for p in np.atleast_1d(periods))
        resolution = tuple(int(r) for r in np.atleast_1d(resolution))
        if len(periods) == 1 and len(resolution) > 1:
            periods = periods * len(resolution)
        if len(resolution) == 1 and len(periods) > 1:
            resolution = resolution * len(periods)
        if not 1 <= len(periods) <= 3:
            raise ValidationError("torus dimension must be 1, 2 or 3")
        if len(periods) != len(resolution):
            raise ValidationError("periods and resolution lengths differ")
        if any(p <= 0 for p in periods):
            raise ValidationError("periods must be positive")
        if any(r < 4 for r in resolution):
            raise ValidationError("resolution must be at least 4 per axis")
        self.periods = periods
        self.resolution = resolution
        self.scale = float(scale)
        self.dimension = len(periods)

    def __repr__(self):
        return (f"TorusGrid(periods={self.periods}, "
                f"resolution={self.resolution}, scale={self.scale})")

    # -- coordinates -------------------------------------------------

    def axes(self):
        return [np.arange(r) * (p / r)
                for p, r in zip(self.periods, self.resolution)]

    @property
    def spacing(self):
        return tuple(p / r for p, r in zip(self.periods, self.resolution))

    @property
    def periodic(self):
        return (True,) * self.dimension

    def wrap(self, points):
        points = _as_points(points, self.dimension)
        return np.mod(points, np.asarray(self.periods))

    def wrapped_diff(self, x, y):
        """Representative of x - y in [-P/2, P/2) per axis."""
        x = _as_points(x, self.dimension)
        y = _as_points(y, self.dimension)
        p = np.asarray(self.periods)
        return np.mod(x - y + p / 2.0, p) - p / 2.0

    # -- metric ------------------------------------------------------

    def metric_diag(self, points):
        points = _as_points(points, self.dimension)
        return np.ones(points.shape)

    def metric_logdet(self, points):
        points = _as_points(points, self.dimension)
        return np.zeros(points.shape[:-1])

    def cell_volumes(self):
        vol = float(np.prod(self.spacing))
        return np.full(self.resolution, vol)

    @property
    def injectivity_radius(self):
        return min(self.periods) / 2.0

    @property
    def diameter(self):
        return 0.5 * float(np.sqrt(np.sum(np.square(self.periods))))

    # -- maps --------------------------------------------------------

    def geodesic_distance(self, x, y):
        d = self.wrapped_diff(x, y)
        return np.sqrt(np.sum(d * d, axis=-1))

    def exp_map(self, x, v, check=True):
        x = _as_points(x, self.dimension)
        v = _as_points(v, self.dimension)
        if check:
            vnorm = np.sqrt(np.sum(v * v, axis=-1))
            bad = vnorm >= self.injectivity_radius
            if np.any(bad):
                raise VectorTooLong(
                    f"max |v| = {float(np.max(vnorm)):.6g} exceeds the "
                    f"injectivity radius {self.injectivity_radius:.6g}")
        return self.wrap(x + v)

    def cost_tensors(self, x, y, order=4, cut_margin=1.0e-9):
        """Cost derivatives at broadcast pairs (x, y).

        Raises ``CutLocusProximity`` when any coordinate difference comes
        within ``cut_margin * P_i`` of the cut value P_i / 2.
        """
        x = _as_points(x, self.dimension)
        y = _as_points(y, self.dimension)
        diff = self.wrapped_diff(x, y)
        p = np.asarray(self.periods)
        if np.any(np.abs(diff) >= (0.5 - cut_margin) * p):
            raise CutLocusProximity(
                "point pair too close to the torus cut locus for "
                "smooth cost derivatives")
        n = self.dimension
        batch = diff.shape[:-1]
        eye = np.broadcast_to(np.eye(n), batch + (n, n)).copy()
        out = {
            "c": 0.5 * np.sum(diff * diff, axis=-1),
            "c_x": diff,
            "c_xx": eye,
            "c_xy": -eye,
            "zeta": np.zeros(batch),
            "zeta_x": np.zeros(batch + (n,)),
            "zeta_y": np.zeros(batch + (n,)),
            "zeta_xx": np.zeros(batch + (n, n)),
            "zeta_xy": np.zeros(batch + (n, n)),
            "zeta_yy": np.zeros(batch + (n, n)),
        }
        if order >= 3:
            out["c_xxx"] = np.zeros(batch + (n, n, n))
            out["c_xxy"] = np.zeros(batch + (n, n, n))
            out["c_xyy"] = np.zeros(batch + (n, n, n))
        if order >= 4:
            out["c_xxxy"] = np.zeros(batch + (n, n, n, n))
        return CostTensors(**out)

    def max_cost_hessian(self):
        """Sup over admissible pairs of the frame operator norm of the
        second-derivative blocks of c; exactly 1 on the flat torus."""
        return 1.0


class SphereChartGrid(ManifoldGrid):
    """Equatorial band of the round 2-sphere in (phi, theta) coordinates.

    phi in [0, 2 pi) is periodic with ``resolution[0]`` nodes; theta is
    cell-centred on [-theta_max, theta_max] with ``resolution[1]`` cells.
    The band must satisfy cos^2(theta_max) >= 1 / 1.1 so that frame
    components recentred anywhere in the band stay within the
    0.9 / 1.1 Euclidean-equivalence bounds.
    """

    kind = "sphere2-chart"

    def __init__(self, radius=1.0, theta_max=0.30, resolution=(64, 16),
                 scale=1.0):
        radius = float(radius)
        theta_max = float(theta_max)
        resolution = tuple(int(r) for r in np.atleast_1d(resolution))
        if len(resolution) != 2:
            raise ValidationError("sphere chart resolution must be (n_phi, n_theta)")
        if radius <= 0:
            raise ValidationError("radius must be positive")
        if not 0 < theta_max < np.pi / 2:
            raise ValidationError("theta_max must lie in (0, pi/2)")
        if any(r < 4 for r in resolution):
            raise ValidationError("resolution must be at least 4 per axis")
        if np.cos(theta_max) ** 2 < 1.0 / CHART_EQUIV_HIGH - 1.0e-12:
            raise ChartEquivalenceError(
                f"band half-width {theta_max:.4f} rad makes "
                f"cos^2(theta_max) = {np.cos(theta_max) ** 2:.4f} fall below "
                f"{1.0 / CHART_EQUIV_HIGH:.4f}; the chart frame would leave "
                "the 0.9 / 1.1 equivalence band")
        self.radius = radius
        self.theta_max = theta_max
        self.resolution = resolution
        self.scale = float(scale)
        self.dimension = 2

    def __repr__(self):
        return (f"SphereChartGrid(radius={self.radius}, "
                f"theta_max={self.theta_max}, resolution={self.resolution}, "
                f"scale={self.scale})")

    # -- coordinates -------------------------------------------------

    def axes(self):
        n_phi, n_theta = self.resolution
        dphi = 2.0 * np.pi / n_phi
        dtheta = 2.0 * self.theta_max / n_theta
        phi = np.arange(n_phi) * dphi
        theta = -self.theta_max + (np.arange(n_theta) + 0.5) * dtheta
        return [phi, theta]

    @property
    def spacing(self):
        n_phi, n_theta = self.resolution
        return (2.0 * np.pi / n_phi, 2.0 * self.theta_max / n_theta)

    @property
    def periodic(self):
        return (True, False)

    def wrap(self, points):
        points = _as_points(points, self.dimension)
        out = points.copy()
        out[..., 0] = np.mod(out[..., 0], 2.0 * np.pi)
        return out

    # -- metric ------------------------------------------------------

    def metric_diag(self, points):
        points = _as_points(points, self.dimension)
        theta = points[..., 1]
        r2 = self.radius ** 2
        return np.stack([r2 * np.cos(theta) ** 2,
                         np.full(theta.shape, r2)], axis=-1)

    def cell_volumes(self):
        # Exact band areas: R^2 dphi (sin(theta_j + dt/2) - sin(theta_j - dt/2)).
        n_phi, n_theta = self.resolution
        dphi, dtheta = self.spacing
        theta = self.axes()[1]
        band = np.sin(theta + dtheta / 2.0) - np.sin(theta - dtheta / 2.0)
        vols = self.radius ** 2 * dphi * band
        return np.broadcast_to(vols[None, :], self.resolution).copy()

    @property
    def injectivity_radius(self):
        return np.pi * self.radius

    @property
    def diameter(self):
        return np.pi * self.radius

    # -- embedding helpers -------------------------------------------

    def embed(self, points):
        points = _as_points(points, self.dimension)
        phi, theta = points[..., 0], points[..., 1]
        ct = np.cos(theta)
        return self.radius * np.stack(
            [ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)

    def _angle(self, x, y):
        """Great-circle angle via the chord (stable near zero)."""
        chord = np.linalg.norm(self.embed(x) - self.embed(y), axis=-1)
        return 2.0 * np.arcsin(np.clip(chord / (2.0 * self.radius), 0.0, 1.0))

    def geodesic_distance(self, x, y):
        return self.radius * self._angle(x, y)

    def exp_map(self, x, v, check=True):
        x = _as_points(x, self.dimension)
        v = _as_points(v, self.dimension)
        vnorm = np.sqrt(np.sum(v * v, axis=-1))
        if check and np.any(vnorm >= self.injectivity_radius):
            raise VectorTooLong(
                f"max |v| = {float(np.max(vnorm)):.6g} exceeds the "
                f"injectivity radius {self.injectivity_radius:.6g}")
        phi, theta = x[..., 0], x[..., 1]
        st, ct = np.sin(theta), np.cos(theta)
        sp, cp = np.sin(phi), np.cos(phi)
        normal = np.stack([ct * cp, ct * sp, st], axis=-1)
        e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
        e_theta = np.stack([-st * cp, -st * sp, ct], axis=-1)
        tangent = v[..., :1] * e_phi + v[..., 1:] * e_theta
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(vnorm[..., None] > 0.0,
                            tangent / np.where(vnorm[..., None] > 0.0,
                                               vnorm[..., None], 1.0),
                            0.0)
        t = vnorm[..., None] / self.radius
        moved = np.cos(t) * normal + np.sin(t) * unit
        new_theta = np.arcsin(np.clip(moved[..., 2], -1.0, 1.0))
        new_phi = np.mod(np.arctan2(moved[..., 1], moved[..., 0]), 2.0 * np.pi)
        return np.stack([new_phi, new_theta], axis=-1)

    # -- cost derivatives --------------------------------------------

    def _inner_terms(self, x, y):
        """S = <n_x, n_y> on the unit sphere and its chart derivatives."""
        phi, theta = x[..., 0], x[..., 1]
        phib, thetab = y[..., 0], y[..., 1]
        dphi = phi - phib
        st, ct = np.sin(theta), np.cos(theta)
        sb, cb = np.sin(thetab), np.cos(thetab)
        sd, cd = np.sin(dphi), np.cos(dphi)
        S = st * sb + ct * cb * cd
        d1 = {
            "phi": -ct * cb * sd,
            "theta": ct * sb - st * cb * cd,
            "phib": ct * cb * sd,
            "thetab": st * cb - ct * sb * cd,
        }
        d2 = {
            ("phi", "phi"): -ct * cb * cd,
            ("phi", "theta"): st * cb * sd,
            ("theta", "theta"): -S,
            ("phi", "phib"): ct * cb * cd,
            ("phi", "thetab"): ct * sb * sd,
            ("theta", "phib"): -st * cb * sd,
            ("theta", "thetab"): ct * cb + st * sb * cd,
        }
        return S, d1, d2

    def _second_blocks(self, x, y):
        """Closed-form (c_xx, c_xy) blocks, shape (..., 2, 2) each."""
        alpha = self._angle(x, y)
        S, d1, d2 = self._inner_terms(x, y)
        r = np.sin(alpha)
        near = alpha < _DIAG_TOL
        r_safe = np.where(near, 1.0, r)
        # P = alpha / sin(alpha), series below the switch point.
        small = alpha < 1.0e-4
        a2 = alpha * alpha
        P = np.where(small,
                     1.0 + a2 / 6.0 + 7.0 * a2 * a2 / 360.0,
                     alpha / r_safe)
        G = {k: -d1[k] / r_safe for k in d1}
        R2 = self.radius ** 2

        def block(keys_row, keys_col):
            out = np.empty(alpha.shape + (2, 2))
            for i, ki in enumerate(keys_row):
                for j, kj in enumerate(keys_col):
                    key = (ki, kj) if (ki, kj) in d2 else (kj, ki)
                    out[..., i, j] = R2 * (
                        G[ki] * G[kj] * (1.0 - S * P) - P * d2[key])
            return out

        c_xx = block(("phi", "theta"), ("phi", "theta"))
        c_xy = block(("phi", "theta"), ("phib", "thetab"))
        if np.any(near):
            g = self.metric_diag(x)
            gmat = np.zeros(alpha.shape + (2, 2))
            gmat[..., 0, 0] = g[..., 0]
            gmat[..., 1, 1] = g[..., 1]
            mask = near[..., None, None]
            c_xx = np.where(mask, gmat, c_xx)
            c_xy = np.where(mask, -gmat, c_xy)
        return c_xx, c_xy

    def _zeta(self, x, y):
        _, c_xy = self._second_blocks(x, y)
        neg = -c_xy
        det = neg[..., 0, 0] * neg[..., 1, 1] - neg[..., 0, 1] * neg[..., 1, 0]
        return np.log(det)

    def cost_tensors(self, x, y, order=4, cut_margin=1.0e-6):
        """Cost derivatives at broadcast pairs (x, y).

        Orders 3 and 4 and all zeta derivatives use centred differences
        of the closed-form lower-order blocks with step 1e-4 rad, giving
        roughly 1e-6 absolute accuracy.  Raises ``CutLocusProximity``
        when d(x, y) >= (pi - cut_margin) R.
        """
        x = _as_points(x, self.dimension)
        y = _as_points(y, self.dimension)
        x, y = np.broadcast_arrays(x, y)
        x = np.array(x, dtype=float)
        y = np.array(y, dtype=float)
        alpha = self._angle(x, y)
        if np.any(alpha >= np.pi - cut_margin):
            raise CutLocusProximity(
                "point pair too close to antipodal for smooth cost "
                "derivatives")
        batch = alpha.shape
        R2 = self.radius ** 2
        S, d1, _ = self._inner_terms(x, y)
        r = np.sin(alpha)
        near = alpha < _DIAG_TOL
        r_safe = np.where(near, 1.0, r)
        small = alpha < 1.0e-4
        a2 = alpha * alpha
        P = np.where(small, 1.0 + a2 / 6.0 + 7.0 * a2 * a2 / 360.0,
                     alpha / r_safe)
        c_x = np.stack([-R2 * P * d1["phi"], -R2 * P * d1["theta"]], axis=-1)
        c_x[near] = 0.0
        c_xx, c_xy = self._second_blocks(x, y)
        out = {"c": 0.5 * R2 * alpha * alpha, "c_x": c_x,
               "c_xx": c_xx, "c_xy": c_xy}

        h = _FD_STEP

        def shift(p, axis, delta):
            q = p.copy()
            q[..., axis] += delta
            return q

        if order >= 3:
            c_xxx = np.empty(batch + (2, 2, 2))
            c_xxy = np.empty(batch + (2, 2, 2))
            c_xyy = np.empty(batch + (2, 2, 2))
            for k in range(2):
                xx_p, _ = self._second_blocks(shift(x, k, h), y)
                xx_m, _ = self._second_blocks(shift(x, k, -h), y)
                c_xxx[..., :, :, k] = (xx_p - xx_m) / (2.0 * h)
                xx_p, xy_p = self._second_blocks(x, shift(y, k, h))
                xx_m, xy_m = self._second_blocks(x, shift(y, k, -h))
                c_xxy[..., :, :, k] = (xx_p - xx_m) / (2.0 * h)
                c_xyy[..., :, :, k] = (xy_p - xy_m) / (2.0 * h)
            out["c_xxx"] = c_xxx
            out["c_xxy"] = c_xxy
            out["c_xyy"] = c_xyy
        if order >= 4:
            c_xxxy = np.empty(batch + (2, 2, 2, 2))
            for k in range(2):
                for s in range(2):
                    pp, _ = self._second_blocks(shift(x, k, h), shift(y, s, h))
                    pm, _ = self._second_blocks(shift(x, k, h), shift(y, s, -h))
                    mp, _ = self._second_blocks(shift(x, k, -h), shift(y, s, h))
                    mm, _ = self._second_blocks(shift(x, k, -h), shift(y, s, -h))
                    c_xxxy[..., :, :, k, s] = (pp - pm - mp + mm) / (4.0 * h * h)
            out["c_xxxy"] = c_xxxy

        zeta = self._zeta(x, y)
        zeta_x = np.empty(batch + (2,))
        zeta_y = np.empty(batch + (2,))
        zeta_xx = np.empty(batch + (2, 2))
        zeta_xy = np.empty(batch + (2, 2))
        zeta_yy = np.empty(batch + (2, 2))
        zx_p, zx_m, zy_p, zy_m = {}, {}, {}, {}
        for k in range(2):
            zx_p[k] = self._zeta(shift(x, k, h), y)
            zx_m[k] = self._zeta(shift(x, k, -h), y)
            zy_p[k] = self._zeta(x, shift(y, k, h))
            zy_m[k] = self._zeta(x, shift(y, k, -h))
            zeta_x[..., k] = (zx_p[k] - zx_m[k]) / (2.0 * h)
            zeta_y[..., k] = (zy_p[k] - zy_m[k]) / (2.0 * h)
        for k in range(2):
            zeta_xx[..., k, k] = (zx_p[k] - 2.0 * zeta + zx_m[k]) / (h * h)
            zeta_yy[..., k, k] = (zy_p[k] - 2.0 * zeta + zy_m[k]) / (h * h)
        cross_x = (self._zeta(shift(shift(x, 0, h), 1, h), y)
                   - self._zeta(shift(shift(x, 0, h), 1, -h), y)
                   - self._zeta(shift(shift(x, 0, -h), 1, h), y)
                   + self._zeta(shift(shift(x, 0, -h), 1, -h), y)) / (4.0 * h * h)
        zeta_xx[..., 0, 1] = zeta_xx[..., 1, 0] = cross_x
        cross_y = (self._zeta(x, shift(shift(y, 0, h), 1, h))
                   - self._zeta(x, shift(shift(y, 0, h), 1, -h))
                   - self._zeta(x, shift(shift(y, 0, -h), 1, h))
                   + self._zeta(x, shift(shift(y, 0, -h), 1, -h))) / (4.0 * h * h)
        zeta_yy[..., 0, 1] = zeta_yy[..., 1, 0] = cross_y
        for k in range(2):
            for s in range(2):
                zeta_xy[..., k, s] = (
                    self._zeta(shift(x, k, h), shift(y, s, h))
                    - self._zeta(shift(x, k, h), shift(y, s, -h))
                    - self._zeta(shift(x, k, -h), shift(y, s, h))
                    + self._zeta(shift(x, k, -h), shift(y, s, -h))
                ) / (4.0 * h * h)
        out.update(zeta=zeta, zeta_x=zeta_x, zeta_y=zeta_y,
                   zeta_xx=zeta_xx, zeta_xy=zeta_xy, zeta_yy=zeta_yy)
        return CostTensors(**out)

    def max_cost_hessian(self, n_samples=24, within=2.0):
        """Sampled sup of the frame operator norm of the second-derivative
        blocks of c over pairs at geodesic distance <= ``within``."""
        rng = np.random.default_rng(0)
        theta = rng.uniform(-self.theta_max, self.theta_max, n_samples)
        phi = rng.uniform(0.0, 2.0 * np.pi, n_samples)
        x = np.stack([phi, theta], axis=-1)
        theta2 = rng.uniform(-self.theta_max, self.theta_max, n_samples)
        dphi_max = within / (self.radius * np.cos(self.theta_max))
        phi2 = phi + rng.uniform(-dphi_max, dphi_max, n_samples)
        y = np.stack([np.mod(phi2, 2.0 * np.pi), theta2], axis=-1)
        keep = self.geodesic_distance(x, y) <= within
        x, y = x[keep], y[keep]
        if x.shape[0] == 0:
            x = y = np.array([[0.0, 0.0]])
        c_xx, c_xy = self._second_blocks(x, y)
        ex = self.frame_diag(x)
        ey = self.frame_diag(y)
        xx = c_xx * ex[:, :, None] * ex[:, None, :]
        xy = c_xy * ex[:, :, None] * ey[:, None, :]
        norm_xx = np.linalg.norm(xx, ord=2, axis=(1, 2))
        norm_xy = np.linalg.norm(xy, ord=2, axis=(1, 2))
        return 1.05 * float(max(np.max(norm_xx), np.max(norm_xy)))


def make_grid(kind, **kwargs):
    """Factory for the supported grid kinds."""
    if kind == "torus":
        return TorusGrid(**kwargs)
    if kind == "sphere2-chart":
        return SphereChartGrid(**kwargs)
    raise ValidationError(f"unknown manifold kind {kind!r}")


def normalize_manifold(grid):
    """Rescale the metric so the injectivity radius is at least 2.

    When the injectivity radius is already above 2 the grid is returned
    unchanged (the operation is idempotent); otherwise every length is
    multiplied by s = 4 / injectivity_radius and the cumulative factor
    is recorded on the returned grid's ``scale``.
    """
    iota = grid.injectivity_radius
    if iota > 2.0:
        return grid
    s = 4.0 / iota
    if isinstance(grid, TorusGrid):
        return TorusGrid(tuple(p * s for p in grid.periods),
                         grid.resolution, scale=grid.scale * s)
    if isinstance(grid, SphereChartGrid):
        return SphereChartGrid(radius=grid.radius * s,
                               theta_max=grid.theta_max,
                               resolution=grid.resolution,
                               scale=grid.scale * s)
    raise ValidationError(f"cannot normalize grid of kind {grid.kind!r}")


def same_grid(a, b):
    """Structural equality of two grids."""
    if type(a) is not type(b):
        return False
    if isinstance(a, TorusGrid):
        return (a.periods == b.periods and a.resolution == b.resolution)
    return (a.radius == b.radius and a.theta_max == b.theta_max
            and a.resolution == b.resolution)
