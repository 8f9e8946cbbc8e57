"""Damped Newton continuation for the Monge-Ampere transport equation.

The solver follows the linear density path rho_t = (1 - t) mu + t nu
from t = 0 to t = 1.  At each path time a damped Newton iteration
drives the log-form residual F(u, t) to zero inside the admissible cone
(w positive definite), with the gauge fixed by projecting u to zero
mu-mean.  Step sizes adapt: any Newton failure halves the time step,
fast converging steps double it.

Newton's inner linear systems are solved matrix free with a Krylov
method preconditioned by the constant-coefficient inverse Laplacian in
Fourier space; both the right-hand side and the iterates are kept
mu-mean-zero, mirroring the gauge of the nonlinear problem.

The continuation is supported on torus grids, where the periodic
finite-difference calculus makes the linearized operator well posed
without boundary conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres

from .errors import (
    DampingFailed,
    DisplacementTooLarge,
    LinearSolveStalled,
    NewtonDiverged,
    NotCConvex,
    StepUnderflow,
    ValidationError,
)
from .fields import Potential, fd_gradient, fd_hessian, mean_zero_project
from .geometry import TorusGrid
from .transport import TransportPair, hessian_metric, mae_residual, transport_map


@dataclass
class SolverConfig:
    """Newton continuation parameters."""

    newton_tol: float = 1e-10
    max_newton: int = 12
    dt_init: float = 1.0
    dt_min: float = 1e-6
    dt_shrink: float = 0.5
    dt_grow: float = 2.0
    grow_iters: int = 3
    damping_shrink: float = 0.5
    damping_min: float = 1e-4
    armijo: float = 0.1
    linear_tol: float = 1e-10
    linear_maxiter: int = 400
    min_w_eig: float = 1e-8

    def validate(self):
        if not 0 < self.newton_tol < 1:
            raise ValidationError("newton_tol must lie in (0, 1)")
        if self.max_newton < 1:
            raise ValidationError("max_newton must be positive")
        if not 0 < self.dt_init <= 1:
            raise ValidationError("dt_init must lie in (0, 1]")
        if not 0 < self.dt_min <= self.dt_init:
            raise ValidationError("dt_min must lie in (0, dt_init]")
        if not 0 < self.dt_shrink < 1:
            raise ValidationError("dt_shrink must lie in (0, 1)")
        if self.dt_grow < 1:
            raise ValidationError("dt_grow must be at least 1")
        if not 0 < self.damping_shrink < 1:
            raise ValidationError("damping_shrink must lie in (0, 1)")
        if not 0 < self.damping_min < 1:
            raise ValidationError("damping_min must lie in (0, 1)")
        if not 0 < self.armijo < 1:
            raise ValidationError("armijo must lie in (0, 1)")
        if self.min_w_eig <= 0:
            raise ValidationError("min_w_eig must be positive")
        return self


@dataclass
class PathState:
    """Accepted continuation state with its diagnostics."""

    t: float
    potential: Potential
    residual_inf: float
    grad_max: float
    lambda_max: float
    lambda_argmax: tuple
    min_eig_w: float
    newton_iters: int
    dt: float
    gauge: float
    residual_mean: float      # |integral of F d mu|, the gauge of the rhs
    guard: object = None      # GuardReport when a constants ledger is active


@dataclass
class Certificate:
    granted: bool
    reason: str
    lambda_max: float
    grad_max: float
    hessian_cap: float = float("nan")
    grad_budget: float = float("nan")


@dataclass
class SolveResult:
    pair: TransportPair
    config: SolverConfig
    seed: PathState
    trace: list
    certificate: Certificate

    @property
    def potential(self):
        return self.trace[-1].potential if self.trace else self.seed.potential

    @property
    def states(self):
        return [self.seed] + list(self.trace)


class _Linearization:
    """Frozen coefficients of dF at one (u, t) iterate."""

    def __init__(self, pair, u, t, map_field, w_field):
        grid = pair.grid
        self.grid = grid
        self.w_inv = np.linalg.inv(w_field.w)
        rho = pair.rho(t)
        target = map_field.target
        if isinstance(grid, TorusGrid):
            self.torus = True
            self.drift = rho.grad_at(target)
            self.mixed = None
            self.b_mat = None
        else:
            self.torus = False
            ct = grid.cost_tensors(grid.coords, target, order=3)
            self.b_mat = -np.linalg.inv(ct.c_xy)
            drift = rho.grad_at(target) - ct.zeta_y
            theta = target[..., 1]
            drift = drift + np.stack(
                [np.zeros_like(theta), -np.tan(theta)], axis=-1)
            self.drift = drift
            self.mixed = ct.c_xxy

    def apply(self, z):
        grid = self.grid
        hess = fd_hessian(grid, z)
        grad = fd_gradient(grid, z)
        out = np.einsum("...ij,...ij->...", self.w_inv, hess)
        if self.torus:
            return out + np.einsum("...s,...s->...", self.drift, grad)
        delta_t = np.einsum("...sk,...k->...s", self.b_mat, grad)
        out = out + np.einsum("...ij,...ijs,...s->...",
                              self.w_inv, self.mixed, delta_t)
        return out + np.einsum("...s,...s->...", self.drift, delta_t)


def linearized_apply(pair, u, t, z):
    """Derivative of the residual: dF(u, t)[z] at grid nodes.

    This is the exact derivative of the discrete residual, so the
    Taylor remainder F(u + eps z) - F(u) - eps dF(z) is O(eps^2).
    """
    z = np.asarray(z, dtype=float)
    map_field = transport_map(u)
    w_field = hessian_metric(u, map_field)
    lin = _Linearization(pair, u, t, map_field, w_field)
    return lin.apply(z)


def drift_laplacian_apply(pair, u, t, z):
    """Weighted-Laplacian form L z = Delta_w z + w^{ij} beta_i z_j with
    beta = f - (1/2) log det w.

    At a converged solution this operator agrees with dF up to the
    finite-difference consistency error; it makes the self-adjointness
    of the linearization with respect to e^{beta} explicit.
    """
    grid = pair.grid
    if not isinstance(grid, TorusGrid):
        raise ValidationError("drift form is assembled on torus grids only")
    z = np.asarray(z, dtype=float)
    map_field = transport_map(u)
    w_field = hessian_metric(u, map_field, require_positive=True)
    w_inv = np.linalg.inv(w_field.w)
    sign, logdet = np.linalg.slogdet(w_field.w)
    sqrt_det = np.exp(0.5 * logdet)
    hess = fd_hessian(grid, z)
    grad = fd_gradient(grid, z)
    out = np.einsum("...ij,...ij->...", w_inv, hess)
    # Divergence part of Delta_w: (1/sqrt det w) d_i (sqrt det w w^{ij}).
    div = np.zeros_like(z)
    for j in range(grid.dimension):
        coeff = np.zeros_like(z)
        for i in range(grid.dimension):
            coeff += fd_gradient(grid, sqrt_det * w_inv[..., i, j])[..., i]
        div += coeff / sqrt_det * grad[..., j]
    beta = pair.mu.log_values - 0.5 * logdet
    beta_grad = fd_gradient(grid, beta)
    drift = np.einsum("...ij,...i,...j->...", w_inv, beta_grad, grad)
    return out + div + drift


def _fourier_laplacian_preconditioner(grid, coeff):
    """LinearOperator applying (coeff * Laplacian)^{-1} via FFT, with the
    zero mode removed."""
    k2 = np.zeros(grid.resolution)
    for a, (n, p) in enumerate(zip(grid.resolution, grid.periods)):
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=p / n)
        shape = [1] * grid.dimension
        shape[a] = -1
        k2 = k2 + (k ** 2).reshape(shape)
    symbol = -coeff * k2
    with np.errstate(divide="ignore"):
        inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, symbol, 1.0), 0.0)

    size = grid.n_nodes

    def solve(v):
        vh = np.fft.fftn(v.reshape(grid.resolution))
        return np.real(np.fft.ifftn(vh * inv)).reshape(size)

    return LinearOperator((size, size), matvec=solve)


def _mu_project(values, weights):
    return values - float(np.sum(values * weights))


def newton_step(pair, u, t, cfg, state=None):
    """One damped Newton update at fixed path time.

    The grid equation is solvable only up to a constant: the
    finite-difference determinant does not conserve discrete mass
    exactly, so the residual carries an O(h^2) constant component that
    no update can remove.  Progress and convergence are therefore
    measured on the residual with its mu-weighted mean projected out;
    the mean itself is reported separately and vanishes under grid
    refinement.

    Returns (u_next, info) where info carries the projected residuals
    before and after, the damping factor and the linear-solve iteration
    count.  Raises ``LinearSolveStalled`` or ``DampingFailed``.
    """
    grid = pair.grid
    if not isinstance(grid, TorusGrid):
        raise ValidationError("the Newton continuation runs on torus grids")
    weights = pair.mu.cell_masses().reshape(-1)
    weights = weights / weights.sum()

    if state is None:
        map_field = transport_map(u)
        w_field = hessian_metric(u, map_field, require_positive=True)
        resid = mae_residual(pair, u, t, map_field, w_field)
    else:
        map_field, w_field, resid = state
    resid_inf = float(np.max(np.abs(
        _mu_project(resid.reshape(-1), weights))))
    lin = _Linearization(pair, u, t, map_field, w_field)

    rhs = _mu_project(-resid.reshape(-1), weights)

    def matvec(zf):
        out = lin.apply(zf.reshape(grid.resolution)).reshape(-1)
        return _mu_project(out, weights)

    op = LinearOperator((grid.n_nodes, grid.n_nodes), matvec=matvec)
    coeff = float(np.mean(np.trace(lin.w_inv, axis1=-2, axis2=-1)
                          / grid.dimension))
    precond = _fourier_laplacian_preconditioner(grid, coeff)
    rtol = max(cfg.linear_tol, min(1e-2, 0.1 * resid_inf))
    n_inner = [0]

    def count(_):
        n_inner[0] += 1

    z_flat, info = lgmres(op, rhs, M=precond, rtol=rtol, atol=0.0,
                          maxiter=cfg.linear_maxiter, callback=count)
    lin_resid = float(np.linalg.norm(op.matvec(z_flat) - rhs))
    rhs_norm = float(np.linalg.norm(rhs))
    if info != 0 and lin_resid > 1e-6 * max(rhs_norm, 1e-300):
        raise LinearSolveStalled(
            f"Krylov solve stalled at relative residual "
            f"{lin_resid / max(rhs_norm, 1e-300):.3e} after "
            f"{n_inner[0]} iterations")

    z = z_flat.reshape(grid.resolution)
    alpha = 1.0
    while True:
        u_try = mean_zero_project(grid, u.values + alpha * z, pair.mu)
        try:
            map_try = transport_map(u_try)
            w_try = hessian_metric(u_try, map_try)
            if float(np.min(w_try.min_eig)) < cfg.min_w_eig:
                raise NotCConvex("trial step leaves the admissible cone")
            resid_try = mae_residual(pair, u_try, t, map_try, w_try)
        except (NotCConvex, DisplacementTooLarge):
            alpha *= cfg.damping_shrink
            if alpha < cfg.damping_min:
                raise DampingFailed(
                    f"no admissible step above damping floor "
                    f"{cfg.damping_min}") from None
            continue
        resid_try_inf = float(np.max(np.abs(
            _mu_project(resid_try.reshape(-1), weights))))
        if resid_try_inf <= (1.0 - cfg.armijo * alpha) * resid_inf:
            info_out = {
                "residual_before": resid_inf,
                "residual_after": resid_try_inf,
                "alpha": alpha,
                "linear_iterations": n_inner[0],
                "state": (map_try, w_try, resid_try),
            }
            return u_try, info_out
        alpha *= cfg.damping_shrink
        if alpha < cfg.damping_min:
            raise DampingFailed(
                f"Armijo decrease unreachable above damping floor "
                f"{cfg.damping_min} (residual {resid_inf:.3e})")


@dataclass
class NewtonResult:
    potential: Potential
    iterations: int
    residual_inf: float
    history: list
    map_field: object
    w_field: object
    residual: np.ndarray


def solve_at_t(pair, u0, t, cfg):
    """Newton iteration at fixed t until the mean-projected sup-norm
    residual is below ``cfg.newton_tol``; raises ``NewtonDiverged`` past
    ``cfg.max_newton``."""
    cfg.validate()
    weights = pair.mu.cell_masses().reshape(-1)
    weights = weights / weights.sum()
    u = mean_zero_project(pair.grid, u0.values, pair.mu)
    map_field = transport_map(u)
    w_field = hessian_metric(u, map_field, require_positive=True)
    resid = mae_residual(pair, u, t, map_field, w_field)
    resid_inf = float(np.max(np.abs(
        _mu_project(resid.reshape(-1), weights))))
    history = [resid_inf]
    iters = 0
    while resid_inf > cfg.newton_tol:
        if iters >= cfg.max_newton:
            raise NewtonDiverged(
                f"residual {resid_inf:.3e} after {iters} Newton iterations "
                f"(best {min(history):.3e})",
                best_residual=min(history), iterations=iters)
        u, info = newton_step(pair, u, t, cfg,
                              state=(map_field, w_field, resid))
        map_field, w_field, resid = info["state"]
        resid_inf = info["residual_after"]
        history.append(resid_inf)
        iters += 1
    return NewtonResult(u, iters, resid_inf, history, map_field, w_field,
                        resid)


def _diagnose(pair, result, t, dt, guard_fn=None):
    grid = pair.grid
    w_field = result.w_field
    lam = w_field.max_eig
    argmax = np.unravel_index(int(np.argmax(lam)), grid.resolution)
    coords = tuple(float(c) for c in grid.coords[argmax])
    weights = pair.mu.cell_masses().reshape(-1)
    weights = weights / weights.sum()
    resid_mean = abs(float(np.sum(result.residual.reshape(-1) * weights)))
    disp = result.map_field.disp_norm
    state = PathState(
        t=float(t),
        potential=result.potential,
        residual_inf=result.residual_inf,
        grad_max=float(np.max(disp)),
        lambda_max=float(np.max(lam)),
        lambda_argmax=coords,
        min_eig_w=float(np.min(w_field.min_eig)),
        newton_iters=result.iterations,
        dt=float(dt),
        gauge=result.potential.gauge,
        residual_mean=resid_mean,
    )
    if guard_fn is not None:
        state.guard = guard_fn(state)
    return state


def continuity_solve(pair, cfg=None, ledger=None, trace_sink=None):
    """March the density path from t = 0 to t = 1.

    Returns a ``SolveResult`` whose ``seed`` is the validated state at
    t = 0 and whose ``trace`` holds every accepted continuation state in
    strictly increasing t, ending at t = 1.  With a constants ledger the
    Hessian guard runs at every accepted state and a certificate is
    granted when the run stays inside the gradient budget and below the
    Hessian cap.

    ``trace_sink``, when given, receives every accepted state as it is
    produced (seed included), so callers keep the partial trajectory
    even when the march raises.

    Raises ``StepUnderflow`` when step halving hits ``cfg.dt_min`` and
    ``GuardViolated`` when the guard verdict is not ok.
    """
    from .estimates import guard_check  # local import to avoid a cycle
    from .errors import GuardViolated

    cfg = (cfg or SolverConfig()).validate()

    guard_fn = None
    if ledger is not None:
        def guard_fn(state):
            report = guard_check(ledger, state.lambda_max, state.grad_max,
                                 location=state.lambda_argmax)
            # A verdict is binding only while the trap argument applies
            # (valid split, gradient within budget); otherwise it is
            # recorded as advisory and the run continues.
            if report.precondition_met and report.verdict != "ok":
                raise GuardViolated(
                    f"guard verdict {report.verdict!r} at t = {state.t:.6g} "
                    f"with lambda_max = {state.lambda_max:.6g}",
                    report=report, state=state)
            return report

    u = mean_zero_project(pair.grid, np.zeros(pair.grid.resolution), pair.mu)
    seed_result = solve_at_t(pair, u, 0.0, cfg)
    seed = _diagnose(pair, seed_result, 0.0, 0.0, guard_fn)
    if trace_sink is not None:
        trace_sink.append(seed)
    u = seed_result.potential

    trace = []
    t = 0.0
    dt = min(cfg.dt_init, 1.0)
    while t < 1.0:
        t_try = min(t + dt, 1.0)
        try:
            result = solve_at_t(pair, u, t_try, cfg)
        except (NewtonDiverged, DampingFailed, LinearSolveStalled,
                NotCConvex, DisplacementTooLarge) as exc:
            dt *= cfg.dt_shrink
            if dt < cfg.dt_min:
                raise StepUnderflow(
                    f"time step fell below {cfg.dt_min} at t = {t:.6g}; "
                    f"last failure: {exc}") from exc
            continue
        state = _diagnose(pair, result, t_try, t_try - t, guard_fn)
        trace.append(state)
        if trace_sink is not None:
            trace_sink.append(state)
        u = result.potential
        t = t_try
        if result.iterations <= cfg.grow_iters:
            dt = min(dt * cfg.dt_grow, 1.0)

    cert = _certificate(ledger, seed, trace)
    return SolveResult(pair, cfg, seed, trace, cert)


def _certificate(ledger, seed, trace):
    states = [seed] + trace
    lam = max(s.lambda_max for s in states)
    grad = max(s.grad_max for s in states)
    if ledger is None:
        return Certificate(False, "no constants ledger supplied", lam, grad)
    if not ledger.split_valid:
        return Certificate(False, "dichotomy split absent or not "
                           "straddling the Hessian cap", lam, grad,
                           ledger.hessian_cap, ledger.grad_budget)
    if grad > ledger.grad_budget:
        return Certificate(False,
                           f"gradient budget exceeded: {grad:.3e} > "
                           f"{ledger.grad_budget:.3e}", lam, grad,
                           ledger.hessian_cap, ledger.grad_budget)
    if lam > ledger.hessian_cap:
        return Certificate(False,
                           f"lambda_max {lam:.3e} above the Hessian cap",
                           lam, grad, ledger.hessian_cap, ledger.grad_budget)
    return Certificate(True,
                       "lambda_max stayed below the Hessian cap within "
                       "the gradient budget; bound lambda <= cap + 1 "
                       "holds with margin", lam, grad,
                       ledger.hessian_cap, ledger.grad_budget)
