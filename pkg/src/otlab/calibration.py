"""Empirical calibration of the squeeze-chain constants.

The gradient-from-L2 and L2-from-distance inequalities hold with
constants the theory does not pin down numerically.  This module fits
them on a family of solved transport pairs built from seeded harmonic
perturbations, checks the monotone relation between gradient size and
transport distance, and assembles the full end-to-end rehearsal: fit on
a family, compute the squared-distance budget, and certify a run on a
fresh target whose measured distance sits inside the budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .errors import ValidationError
from .estimates import (
    assemble_torus_constants,
    gradient_l2_report,
    make_ledger,
    wasserstein_budget,
)
from .fields import make_density, resample_density
from .geometry import TorusGrid
from .solver import SolverConfig, continuity_solve
from .transport import TransportPair
from .wasserstein import density_to_atoms, exact_ot


@dataclass
class FamilySpec:
    """Resolution-independent description of one harmonic target."""

    amplitude: float
    wavevector: tuple
    phase: float


def family_specs(dimension, count, scale, seed):
    """Seeded harmonic-perturbation family on the unit torus of any
    resolution; amplitudes span [0.3, 1] x scale so the fit sees a
    range of gradient sizes."""
    if count < 1 or scale <= 0:
        raise ValidationError("count must be >= 1 and scale > 0")
    rng = np.random.default_rng(seed)
    specs = []
    for k in range(count):
        amplitude = scale * (0.3 + 0.7 * (k + 1) / count)
        wave = [0] * dimension
        wave[k % dimension] = 1 + (k // dimension) % 2
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        specs.append(FamilySpec(amplitude, tuple(wave), phase))
    return specs


def realize_pair(grid, spec, cbar=1.0):
    """Pair for one family member: uniform source, harmonic target."""
    mu = make_density(grid, "uniform")
    nu = make_density(grid, "harmonic", amplitude=spec.amplitude,
                      wavevector=spec.wavevector, phase=spec.phase)
    return TransportPair(mu, nu, cbar=cbar)


@dataclass
class PairMeasurement:
    """Solved-pair quantities the squeeze constants relate."""

    grad_sup: float
    l2_sq: float
    w1: float
    w2_sq: float
    lambda_max: float
    ratio_grad: float         # grad_sup^{n+4} / l2_sq
    ratio_l2_w1: float        # l2_sq / W1^{1/2}
    ratio_l2_w2: float        # l2_sq / (W2^2)^{1/8}


def _coarsen_density(field, resolution):
    """Resample the log-density onto a coarser grid of the same periods."""
    coarse = TorusGrid(periods=field.grid.periods,
                       resolution=(int(resolution),) * field.grid.dimension)
    return resample_density(field, coarse)


def measure_pair(pair, cfg=None, w1_resolution=None):
    """Solve the pair, measure gradient/L2/distance quantities.

    The linear-cost distance is far slower to evaluate exactly than the
    quadratic one (its optimal arcs can be long-range, defeating sparse
    candidate pruning), so ``w1_resolution`` optionally pins that one
    estimate to a fixed coarse quantization; using the same coarse grid
    at every solver resolution keeps fitted ratios comparable.
    """
    result = continuity_solve(pair, cfg or SolverConfig())
    u = result.potential
    report = gradient_l2_report(
        u, pair.mu, semiconvexity=abs(
            min(0.0, _min_hessian(u))) * 1.01 + 1e-12)
    mu_atoms = density_to_atoms(pair.mu)
    nu_atoms = density_to_atoms(pair.nu)
    plan2 = exact_ot(mu_atoms, nu_atoms, cost_exponent=2.0)
    if (w1_resolution is not None
            and int(w1_resolution) < min(pair.grid.resolution)):
        plan1 = exact_ot(
            density_to_atoms(_coarsen_density(pair.mu, w1_resolution)),
            density_to_atoms(_coarsen_density(pair.nu, w1_resolution)),
            cost_exponent=1.0)
    else:
        plan1 = exact_ot(mu_atoms, nu_atoms, cost_exponent=1.0)
    w2_sq = plan2.cost                # quadratic plan cost is sum pi d^2
    w1 = plan1.cost
    lam = max(state.lambda_max for state in result.states)
    if report.l2_sq > 0:
        ratio_grad = report.grad_sup ** report.exponent / report.l2_sq
    else:
        ratio_grad = 0.0
    ratio_w1 = report.l2_sq / w1 ** 0.5 if w1 > 0 else 0.0
    ratio_w2 = report.l2_sq / w2_sq ** 0.125 if w2_sq > 0 else 0.0
    return PairMeasurement(report.grad_sup, report.l2_sq, w1, w2_sq, lam,
                           ratio_grad, ratio_w1, ratio_w2)


def _min_hessian(u):
    from .estimates import min_hessian_eigenvalue
    return min_hessian_eigenvalue(u)


@dataclass
class SqueezeFit:
    """Family-worst-case constants for the squeeze chain."""

    dimension: int
    count: int
    grad_constant: float      # dominates grad^{n+4} / l2
    l2_w1_constant: float     # dominates l2 / W1^{1/2}
    l2_w2_constant: float     # dominates l2 / (W2^2)^{1/8}
    spearman_grad_w2: float   # monotone-trend statistic


def fit_squeeze(measurements, dimension):
    """Smallest constants dominating each squeeze over the family, plus
    the Spearman rank correlation between gradient size and distance."""
    if len(measurements) < 2:
        raise ValidationError("need at least two measurements to fit")
    grads = [m.grad_sup for m in measurements]
    w2s = [m.w2_sq for m in measurements]
    rho = float(spearmanr(grads, w2s).statistic)
    return SqueezeFit(
        dimension=int(dimension),
        count=len(measurements),
        grad_constant=max(m.ratio_grad for m in measurements),
        l2_w1_constant=max(m.ratio_l2_w1 for m in measurements),
        l2_w2_constant=max(m.ratio_l2_w2 for m in measurements),
        spearman_grad_w2=rho)


def calibrate_family(grid, count=10, scale=1e-3, seed=0, cbar=1.0,
                     cfg=None, w1_resolution="auto"):
    """Fit the squeeze constants on the seeded family at one grid.

    ``w1_resolution="auto"`` keeps the native quantization in one
    dimension and pins a 16-per-axis coarse quantization above, where
    the exact linear-cost distance would otherwise dominate the runtime.
    """
    if w1_resolution == "auto":
        w1_resolution = 16 if grid.dimension >= 2 else None
    specs = family_specs(grid.dimension, count, scale, seed)
    measurements = [
        measure_pair(realize_pair(grid, s, cbar), cfg,
                     w1_resolution=w1_resolution)
        for s in specs]
    return fit_squeeze(measurements, grid.dimension), measurements


@dataclass
class RehearsalReport:
    """Full-pipeline certification on a fresh small-perturbation pair."""

    fit: SqueezeFit
    ledger: object
    budget_w2_sq: float       # largest admissible squared distance
    target_w2_sq: float       # measured squared distance of the target
    within_budget: bool
    grad_max: float
    lambda_max: float
    certificate: object
    result: object


def rehearse(resolution=256, family_count=8, family_scale=1.2e-3,
             target_scale=6e-5, delta0=1.5e-3, seed=3, cfg=None):
    """Fit constants on a one-dimensional family, then certify a target.

    The family amplitudes are chosen so the largest gradients approach
    the budget delta0; the target sits well below the family scale, so
    its measured squared distance falls inside the derived budget and
    the continuation run must stay within both the gradient budget and
    the Hessian cap, granting the certificate.
    """
    grid = TorusGrid(periods=(2.0 * np.pi,), resolution=(resolution,))
    fit, measurements = calibrate_family(grid, family_count, family_scale,
                                         seed, cfg=cfg)

    target_spec = FamilySpec(amplitude=target_scale, wavevector=(1,),
                             phase=0.85)
    pair = realize_pair(grid, target_spec)
    consts = assemble_torus_constants(pair)
    ledger = make_ledger(
        dimension=1, cbar=pair.cbar, grad_budget=delta0,
        poly_c1=consts["poly_c1"], poly_c2=consts["poly_c2"],
        max_cost_hessian=grid.max_cost_hessian(),
        det_lower_bound=consts["det_lower_bound"])
    budget = wasserstein_budget(delta0, fit.grad_constant,
                                fit.l2_w2_constant, 1)

    target = measure_pair(pair, cfg)
    run = continuity_solve(pair, cfg, ledger=ledger)
    grad_max = max(s.grad_max for s in run.states)
    lam_max = max(s.lambda_max for s in run.states)
    return RehearsalReport(
        fit=fit,
        ledger=ledger,
        budget_w2_sq=budget,
        target_w2_sq=target.w2_sq,
        within_budget=bool(target.w2_sq <= budget),
        grad_max=grad_max,
        lambda_max=lam_max,
        certificate=run.certificate,
        result=run)
