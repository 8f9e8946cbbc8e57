"""Acceptance suite: ten pinned end-to-end criteria.

Each test prints exactly one PASS/FAIL line directly on the terminal
(bypassing pytest capture) with the measured quantities next to their
pinned tolerances, then asserts the same condition.
"""

import numpy as np
import pytest

from otlab.calibration import calibrate_family, rehearse
from otlab.estimates import (
    dichotomy_split,
    guard_check,
    hessian_cap_constant,
    make_ledger,
)
from otlab.fields import Potential, make_density, mean_zero_project, path_density
from otlab.geometry import TorusGrid
from otlab.solver import continuity_solve, linearized_apply
from otlab.transport import (
    TransportPair,
    hessian_metric,
    mae_residual,
    pushforward_error,
    transport_map,
)
from otlab.wasserstein import density_to_atoms, exact_ot

TAU = 2.0 * np.pi


@pytest.fixture
def verdict(capsys):
    def _check(tag, ok, detail):
        line = f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})"
        with capsys.disabled():
            print(line, flush=True)
        assert ok, line
    return _check


def test_01_identity_path(verdict):
    """Equal endpoints on a 64^2 torus keep the zero potential: the
    seed residual stays at most 1e-12 and the metric maximum is one."""
    grid = TorusGrid((TAU, TAU), (64, 64))
    mu = make_density(grid, "uniform")
    pair = TransportPair(mu, mu, cbar=1.0)
    result = continuity_solve(pair)
    seed = result.seed
    resid = float(np.max(np.abs(mae_residual(pair, seed.potential, 0.0))))
    lam_dev = float(np.max(np.abs(
        hessian_metric(seed.potential).max_eig - 1.0)))
    u_sup = float(np.max(np.abs(seed.potential.values)))
    ok = (seed.t == 0.0 and u_sup == 0.0 and resid <= 1e-12
          and lam_dev == 0.0)
    verdict("acceptance 01 identity-path", ok,
            f"sup u = {u_sup:g}, residual {resid:.2e} <= 1e-12, "
            f"sup |Lambda - 1| = {lam_dev:g}")


def test_02_linearization_order(verdict):
    """Taylor remainder of the residual against its linearization has
    log-log slope 2.0 +- 0.15 over eps in {1e-2, 1e-3, 1e-4} at twenty
    random potentials, directions and path times."""
    rng = np.random.default_rng(11)
    eps_values = np.array([1e-2, 1e-3, 1e-4])
    slopes = []
    for dim, res in ((1, (64,)), (2, (24, 24))):
        grid = TorusGrid((TAU,) * dim, res)
        mu = make_density(grid, "uniform")
        nu = make_density(grid, "harmonic", amplitude=0.1,
                          wavevector=(1,) + (0,) * (dim - 1), phase=0.7)
        pair = TransportPair(mu, nu, cbar=10.0)
        x = grid.coords
        for _ in range(10):
            u_vals = np.zeros(res)
            z_vals = np.zeros(res)
            for vals, lo, hi in ((u_vals, 0.005, 0.02),
                                 (z_vals, 0.5, 1.0)):
                for _ in range(2):
                    k = rng.integers(-2, 3, size=dim)
                    if not np.any(k):
                        k[0] = 1
                    phase = rng.uniform(0, TAU)
                    vals += rng.uniform(lo, hi) * np.cos(
                        np.tensordot(x, k, axes=(-1, 0)) + phase)
            t = float(rng.uniform(0.0, 1.0))
            u = mean_zero_project(grid, u_vals, mu)
            base = mae_residual(pair, u, t)
            deriv = linearized_apply(pair, u, t, z_vals)
            remainders = [
                float(np.max(np.abs(
                    mae_residual(pair, Potential(grid, u.values
                                                 + eps * z_vals), t)
                    - base - eps * deriv)))
                for eps in eps_values]
            slope, _ = np.polyfit(np.log(eps_values),
                                  np.log(remainders), 1)
            slopes.append(float(slope))
    dev = max(abs(s - 2.0) for s in slopes)
    ok = len(slopes) == 20 and dev <= 0.15
    verdict("acceptance 02 linearization-order", ok,
            f"20 slopes in [{min(slopes):.3f}, {max(slopes):.3f}], "
            f"max |slope - 2| = {dev:.3f} <= 0.15")


def test_03_oracle_map_equivalence(verdict):
    """On a 64-cell circle bump pair the continuation map agrees with
    the exact-plan barycentric map within two grid spacings and its
    transport cost is within 2% of the optimum."""
    grid = TorusGrid((TAU,), (64,))
    mu = make_density(grid, "gaussian_bump", center=(2.0,), width=0.9,
                      amplitude=2.0)
    nu = make_density(grid, "gaussian_bump", center=(4.2,), width=1.0,
                      amplitude=2.0)
    pair = TransportPair(mu, nu, cbar=10.0)
    result = continuity_solve(pair)
    map_field = transport_map(result.potential)

    src = density_to_atoms(mu)
    tgt = density_to_atoms(nu)
    plan = exact_ot(src, tgt, cost_exponent=2.0)
    coupling = np.asarray(plan.coupling.todense())
    disp = grid.wrapped_diff(tgt.points[None, :, :],
                             src.points[:, None, :])
    bary = np.sum(coupling[..., None] * disp, axis=1) \
        / src.masses[:, None]
    lp_targets = grid.wrap(src.points + bary)

    gap = float(np.max(grid.geodesic_distance(
        map_field.target.reshape(-1, 1), lp_targets)))
    h = TAU / 64
    solver_cost = float(np.sum(src.masses
                               * map_field.disp_norm.reshape(-1) ** 2))
    cost_rel = abs(solver_cost - plan.cost) / plan.cost
    ok = gap <= 2 * h and cost_rel <= 0.02
    verdict("acceptance 03 oracle-map-equivalence", ok,
            f"map gap {gap:.4f} <= {2 * h:.4f}, "
            f"cost rel err {cost_rel:.4%} <= 2%")


def test_04_pushforward_fidelity(verdict):
    """Solving a 64^2 bump pair moves the source onto the target with
    total-variation error at most 1e-3 and sup Jacobian-identity error
    at most 1e-2."""
    grid = TorusGrid((TAU, TAU), (64, 64))
    mu = make_density(grid, "gaussian_bump", center=(2.0, 3.0),
                      width=2.0, amplitude=0.15)
    nu = make_density(grid, "gaussian_bump", center=(4.0, 3.5),
                      width=2.2, amplitude=0.15)
    pair = TransportPair(mu, nu, cbar=10.0)
    result = continuity_solve(pair)
    rep = pushforward_error(pair, result.potential, 1.0, subsample=4)
    ok = rep.tv_error <= 1e-3 and rep.jacobian_sup_error <= 1e-2
    verdict("acceptance 04 pushforward-fidelity", ok,
            f"TV {rep.tv_error:.2e} <= 1e-3, "
            f"jacobian sup {rep.jacobian_sup_error:.2e} <= 1e-2")


def test_05_hessian_cap_formula(verdict):
    """The curvature-cap constant matches a 40-digit evaluation of
    4 n (2.3)^(11 n) max|D^2 cost| to twelve significant digits for
    dimensions one to three."""
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    worst = 0.0
    for n in (1, 2, 3):
        for scale in (1.0, 1.7):
            ours = hessian_cap_constant(n, scale)
            exact = 4 * n * mp.mpf("2.3") ** (11 * n) * mp.mpf(repr(scale))
            worst = max(worst, float(abs(ours - exact) / exact))
    ok = worst <= 1e-12
    verdict("acceptance 05 hessian-cap-formula", ok,
            f"max rel err {worst:.2e} <= 1e-12 over n in {{1,2,3}}")


def test_06_dichotomy_split(verdict):
    """Split roots match the quadratic closed form to 1e-10 relative;
    a degree-five split can be driven to straddle the cap by shrinking
    the budget; the steep instance 1e6 x <= 1 + x^7 gives a small root
    at most 1.1e-6 and a large root at least 9.9."""
    # quadratic closed form: x/delta0^2 = 1 + x^2 at delta0 = 0.1
    quad = dichotomy_split(1.0, 1.0, 0.1, 2)
    lo_exact = 50.0 - np.sqrt(2499.0)
    hi_exact = 50.0 + np.sqrt(2499.0)
    quad_err = max(abs(quad.root_low - lo_exact) / lo_exact,
                   abs(quad.root_high - hi_exact) / hi_exact)

    # degree-five ladder: halve the budget until the roots straddle
    # the dimension-two cap, then audit the polynomial residuals.
    cap2 = hessian_cap_constant(2, 1.0)
    delta0, ladder = 0.1, None
    for _ in range(80):
        rep = dichotomy_split(1.0, 1.0, delta0, 5)
        if rep.exists and rep.root_low < cap2 < rep.root_high:
            ladder = rep
            break
        delta0 *= 0.5

    def poly_rel_residual(rep, x):
        value = rep.c1 + rep.c2 * x ** rep.degree - x / rep.delta0 ** 2
        scale = rep.c1 + rep.c2 * x ** rep.degree + x / rep.delta0 ** 2
        return abs(value) / scale

    ladder_ok = ladder is not None
    ladder_err = (max(poly_rel_residual(ladder, ladder.root_low),
                      poly_rel_residual(ladder, ladder.root_high))
                  if ladder_ok else np.inf)

    steep = dichotomy_split(1.0, 1.0, 1e-3, 7)
    ok = (quad_err <= 1e-10 and ladder_ok and ladder_err <= 1e-10
          and steep.root_low <= 1.1e-6 and steep.root_high >= 9.9)
    verdict("acceptance 06 dichotomy-split", ok,
            f"closed-form rel err {quad_err:.1e} <= 1e-10, ladder root "
            f"residual {ladder_err:.1e} <= 1e-10 at budget {delta0:.2e}, "
            f"steep roots {steep.root_low:.3e} <= 1.1e-6 and "
            f"{steep.root_high:.3f} >= 9.9")


def test_07_squeeze_chain_stability(verdict):
    """Over ten solved pairs at unit log-density budget on the torus,
    the fitted gradient-power and distance-squeeze constants are finite
    and move by at most a factor of two under refinement 32^2 to 64^2."""
    fits = {}
    for res in (32, 64):
        grid = TorusGrid((TAU, TAU), (res, res))
        fit, _ = calibrate_family(grid, count=10, scale=0.15, seed=7,
                                  cbar=1.0)
        fits[res] = fit
    coarse, fine = fits[32], fits[64]
    pairs = ((coarse.grad_constant, fine.grad_constant),
             (coarse.l2_w1_constant, fine.l2_w1_constant))
    finite = all(np.isfinite(c) and np.isfinite(f) and c > 0 and f > 0
                 for c, f in pairs)
    ratio = max(max(c / f, f / c) for c, f in pairs)
    ok = finite and coarse.count == 10 and fine.count == 10 \
        and ratio <= 2.0
    verdict("acceptance 07 squeeze-chain-stability", ok,
            f"10 pairs, worst refinement ratio {ratio:.3f} <= 2.0 "
            f"(gradient-power {coarse.grad_constant:.3e} -> "
            f"{fine.grad_constant:.3e}, distance-squeeze "
            f"{coarse.l2_w1_constant:.3e} -> {fine.l2_w1_constant:.3e})")


def test_08_certified_rehearsal(verdict):
    """A target built inside the measured squared-distance budget runs
    to the end of the path with every gradient within budget and the
    metric maximum under the cap, granting the certificate."""
    report = rehearse()
    states = report.result.states
    budget = report.ledger.grad_budget
    grads_ok = all(s.grad_max <= budget for s in states)
    lam_ok = report.lambda_max <= report.ledger.hessian_cap
    finished = states[-1].t == 1.0
    ok = (report.within_budget and grads_ok and lam_ok and finished
          and report.certificate.granted)
    verdict("acceptance 08 certified-rehearsal", ok,
            f"target {report.target_w2_sq:.3e} <= budget "
            f"{report.budget_w2_sq:.3e}, grad {report.grad_max:.2e} <= "
            f"{budget:.2e}, Lambda {report.lambda_max:.6f} <= cap, "
            f"certificate={report.certificate.granted}")


def test_09_path_distance_monotonicity(verdict):
    """Transport distance from the source to the interpolated density
    never exceeds the endpoint distance plus the 2 h diam allowance at
    the three interior path times on a 32^2 instance."""
    grid = TorusGrid((TAU, TAU), (32, 32))
    mu = make_density(grid, "gaussian_bump", center=(2.5, 3.0),
                      width=1.5, amplitude=0.3)
    nu = make_density(grid, "gaussian_bump", center=(3.8, 3.2),
                      width=1.3, amplitude=0.3)
    mu_atoms = density_to_atoms(mu)
    endpoint = float(np.sqrt(exact_ot(
        mu_atoms, density_to_atoms(nu)).cost))
    allowance = 2.0 * (TAU / 32) * grid.diameter
    worst = -np.inf
    for t in (0.25, 0.5, 0.75):
        rho_t = path_density(mu, nu, t)
        wt = float(np.sqrt(exact_ot(
            mu_atoms, density_to_atoms(rho_t)).cost))
        worst = max(worst, wt - endpoint - allowance)
    ok = worst <= 0.0
    verdict("acceptance 09 path-distance-monotonicity", ok,
            f"max excess {worst:.3e} <= 0 against endpoint "
            f"{endpoint:.4f} + allowance {allowance:.4f}")


def test_10_guard_trichotomy(verdict):
    """Synthetic metric maxima at half the small root, just above the
    cap, and twice the large root classify as ok, violated and
    catastrophic."""
    ledger = make_ledger(dimension=1, cbar=1.0, grad_budget=0.005,
                         poly_c1=1.0, poly_c2=1.0, max_cost_hessian=1.0)
    assert ledger.split_valid
    probes = (0.5 * ledger.root_low, ledger.hessian_cap + 0.5,
              2.0 * ledger.root_high)
    verdicts = [guard_check(ledger, lam).verdict for lam in probes]
    ok = verdicts == ["ok", "violated", "catastrophic"]
    verdict("acceptance 10 guard-trichotomy", ok,
            "verdicts " + "/".join(verdicts) + " for probes below the "
            "small root, above the cap, beyond the large root")
