"""Quantitative Hessian-bound machinery: constants, split, guard, audits.

The a-priori argument the solver monitors runs through a small set of
explicit constants:

* a Hessian cap ``4 n (2.3)^{11 n} sup|D^2 c|`` above which the
  pointwise maximum-principle inequality applies;
* a dichotomy polynomial bound ``x / delta0^2 <= c1 + c2 x^degree``
  whose root structure forbids a band of Hessian values, trapping the
  continuation below the cap;
* a gradient budget ``delta0`` and a squared-Wasserstein budget derived
  from the gradient-from-L2 and L2-from-distance squeezes.

Everything here is measurable on grid data; nothing is asserted that
cannot be recomputed from the ledger fields.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NotSemiconvex, ValidationError
from .fields import fd_gradient, fd_hessian
from .geometry import TorusGrid

# Chart-equivalence loss factors: lengths measured in a recentred frame
# chart are within [1/2.3, 2.21] spectral factors of the metric ones
# after the 0.9/1.1 Euclidean-equivalence band is applied through the
# eleven-fold product structure of the cap.
_CAP_BASE = 2.3
_LOSS_BASE = 2.21


def hessian_cap_constant(dimension, max_cost_hessian=1.0):
    """Threshold 4 n (2.3)^{11 n} sup|D^2 c| for the Hessian guard."""
    n = int(dimension)
    if n < 1:
        raise ValidationError("dimension must be positive")
    if max_cost_hessian <= 0:
        raise ValidationError("max_cost_hessian must be positive")
    return 4.0 * n * _CAP_BASE ** (11 * n) * float(max_cost_hessian)


@dataclass
class DichotomyReport:
    """Root structure of x / delta0^2 = c1 + c2 x^degree."""

    exists: bool
    root_low: float | None
    root_high: float | None
    x_min: float              # argmin of the gap function
    gap_min: float            # min of c1 + c2 x^m - x / delta0^2
    delta0_star: float        # largest delta0 with two roots (tangency)
    c1: float
    c2: float
    delta0: float
    degree: int


def dichotomy_split(c1, c2, delta0, degree):
    """Split the admissible Hessian values via the polynomial bound.

    The bound x / delta0^2 <= c1 + c2 x^degree fails on an interval
    (root_low, root_high) exactly when delta0 < delta0_star; values
    satisfying the bound then fall into [0, root_low] or
    [root_high, inf).  Roots are solved to machine precision.
    """
    c1, c2, delta0 = float(c1), float(c2), float(delta0)
    m = int(degree)
    if min(c1, c2, delta0) <= 0:
        raise ValidationError("c1, c2 and delta0 must be positive")
    if m < 2:
        raise ValidationError("degree must be at least 2")

    inv = 1.0 / (delta0 * delta0)

    def gap(x):
        return c1 + c2 * x ** m - x * inv

    # Interior minimum of the gap and the closed-form tangency budget.
    x_min = (inv / (m * c2)) ** (1.0 / (m - 1))
    gap_min = gap(x_min)
    log_star = ((m - 1) * math.log(m - 1) - (m - 1) * math.log(c1)
                - math.log(c2) - m * math.log(m)) / (2.0 * m)
    delta0_star = math.exp(log_star)

    if gap_min >= 0.0:
        return DichotomyReport(False, None, None, x_min, gap_min,
                               delta0_star, c1, c2, delta0, m)
    # xtol must be pushed far below its default: the small root scales
    # like c1 * delta0^2 and the termination test is xtol + rtol * x.
    eps4 = 4 * np.finfo(float).eps
    root_low = brentq(gap, 0.0, x_min, xtol=1e-300, rtol=eps4)
    hi = 2.0 * x_min
    while gap(hi) <= 0.0:
        hi *= 2.0
    root_high = brentq(gap, x_min, hi, xtol=1e-300, rtol=eps4)
    return DichotomyReport(True, float(root_low), float(root_high), x_min,
                           gap_min, delta0_star, c1, c2, delta0, m)


@dataclass
class ConstantsLedger:
    """All constants a certified continuation run depends on."""

    dimension: int
    cbar: float               # C2 budget admitted for the densities
    grad_budget: float        # sup |grad u| allowed along the path
    poly_c1: float
    poly_c2: float
    poly_degree: int
    hessian_cap: float
    max_cost_hessian: float
    det_lower_bound: float    # lower bound on e^{f - g} along the path
    semiconvexity: float      # D^2 u >= -A assumed by the L2 squeeze
    log_power: float          # exponent 1/(11 n) of the cutoff weight
    grad_exponent: int        # n + 4, the gradient-from-L2 power
    root_low: float | None
    root_high: float | None
    split_valid: bool

    def __post_init__(self):
        expected = hessian_cap_constant(self.dimension,
                                        self.max_cost_hessian)
        if not math.isclose(self.hessian_cap, expected, rel_tol=1e-12):
            raise ValidationError(
                f"hessian_cap {self.hessian_cap!r} does not equal "
                f"4 n (2.3)^(11 n) max|D^2 c| = {expected!r}")
        if self.split_valid:
            a, b = self.root_low, self.root_high
            if not (a is not None and b is not None
                    and 0 < a < self.hessian_cap
                    and self.hessian_cap + 1.0 < b):
                raise ValidationError(
                    "split_valid requires 0 < root_low < cap < cap + 1 "
                    "< root_high")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def make_ledger(dimension, cbar, grad_budget, poly_c1, poly_c2,
                max_cost_hessian=1.0, det_lower_bound=None,
                semiconvexity=1.0, degree=None):
    """Assemble a ConstantsLedger, solving the dichotomy roots.

    The split is marked valid only when both roots exist and straddle
    [cap, cap + 1], which is what the trapping argument needs.
    """
    n = int(dimension)
    degree = int(degree) if degree is not None else 3 * n - 1
    cap = hessian_cap_constant(n, max_cost_hessian)
    if det_lower_bound is None:
        det_lower_bound = math.exp(-2.0 * cbar)
    report = dichotomy_split(poly_c1, poly_c2, grad_budget, degree)
    valid = (report.exists and report.root_low < cap
             and cap + 1.0 < report.root_high)
    return ConstantsLedger(
        dimension=n, cbar=float(cbar), grad_budget=float(grad_budget),
        poly_c1=float(poly_c1), poly_c2=float(poly_c2), poly_degree=degree,
        hessian_cap=cap, max_cost_hessian=float(max_cost_hessian),
        det_lower_bound=float(det_lower_bound),
        semiconvexity=float(semiconvexity),
        log_power=1.0 / (11.0 * n), grad_exponent=n + 4,
        root_low=report.root_low, root_high=report.root_high,
        split_valid=bool(valid))


@dataclass
class GuardReport:
    verdict: str              # "ok" | "violated" | "catastrophic"
    warning: bool             # lambda in the transitional band (a, cap]
    precondition_met: bool    # valid split and gradient within budget
    lambda_max: float
    root_low: float | None
    root_high: float | None
    hessian_cap: float
    bound_lhs: float          # lambda / delta0^2
    bound_rhs: float          # c1 + c2 lambda^degree
    grad_max: float
    grad_budget: float
    location: tuple | None
    direction: tuple | None
    message: str


def guard_check(ledger, lambda_max, grad_max=None, location=None,
                direction=None):
    """Classify a measured Hessian maximum against the forbidden band.

    Values at or below root_low are fully inside the trapped region;
    values in (root_low, cap] are flagged ok-with-warning because a
    discrete maximum can overshoot the continuum trap without breaking
    the argument; values in (cap, root_high) contradict the bound, and
    values at or beyond root_high mean the trap was escaped entirely.

    The trap argument only applies while the gradient stays within
    budget and a valid split exists; otherwise the verdict is still
    computed from interval membership but flagged precondition-unmet
    (reported, never fatal).  Both sides of the polynomial bound are
    recorded either way.
    """
    lam = float(lambda_max)
    grad = float("nan") if grad_max is None else float(grad_max)
    lhs = lam / (ledger.grad_budget * ledger.grad_budget)
    rhs = ledger.poly_c1 + ledger.poly_c2 * lam ** ledger.poly_degree
    loc = None if location is None else tuple(location)
    vec = None if direction is None else tuple(direction)
    grad_ok = grad_max is None or grad <= ledger.grad_budget

    def report(verdict, warning, met, message):
        return GuardReport(verdict, warning, met, lam, ledger.root_low,
                           ledger.root_high, ledger.hessian_cap, lhs, rhs,
                           grad, ledger.grad_budget, loc, vec, message)

    if not ledger.split_valid:
        return report("ok", True, False, "no valid split; guard inactive")
    a, b = ledger.root_low, ledger.root_high
    cap = ledger.hessian_cap
    if lam <= a:
        verdict, warning, message = "ok", False, "inside the trapped region"
    elif lam <= cap:
        verdict, warning, message = ("ok", True,
                                     "transitional band above root_low, "
                                     "below cap")
    elif lam < b:
        verdict, warning, message = ("violated", False,
                                     "inside the forbidden band "
                                     "(cap, root_high)")
    else:
        verdict, warning, message = ("catastrophic", False,
                                     "at or beyond root_high; trap escaped")
    if not grad_ok:
        message += "; gradient budget exceeded, verdict advisory only"
    return report(verdict, warning, grad_ok, message)


# -- Hessian maximum extraction -------------------------------------------


@dataclass
class LambdaSummary:
    """Global maximum of the solution metric's top frame eigenvalue."""

    value: float
    index: tuple              # grid index (first occurrence wins)
    location: tuple           # chart coordinates of that node
    direction: tuple          # maximizing unit frame vector


def lambda_field(w_field):
    """Per-node top eigenvalue of w plus its global maximum data.

    Ties resolve to the lowest grid-linear index so reports are
    deterministic.  The direction is the unit eigenvector of the frame
    matrix at the maximizing node.
    """
    grid = w_field.grid
    values = w_field.max_eig
    idx = np.unravel_index(int(np.argmax(values)), grid.resolution)
    frame = 0.5 * (w_field.frame[idx] + w_field.frame[idx].T)
    eigvals, eigvecs = np.linalg.eigh(frame)
    direction = eigvecs[:, -1]
    if direction[np.argmax(np.abs(direction))] < 0:
        direction = -direction
    summary = LambdaSummary(
        value=float(values[idx]),
        index=tuple(int(i) for i in idx),
        location=tuple(float(c) for c in grid.coords[idx]),
        direction=tuple(float(d) for d in direction))
    return values, summary


# -- cutoff test function and the flat inequality audit -------------------


def cutoff_test_function(u, delta0, center):
    """Localized gradient weight
    eta = (1 + |grad u|^2 / delta0^2 - 2 d(x, center)^2)_+

    supported where the recentred distance is below ~5/4 once the
    gradient budget holds.
    """
    grid = u.grid
    if delta0 <= 0:
        raise ValidationError("delta0 must be positive")
    grad = fd_gradient(grid, u.values)
    fr = grid.covector_to_frame(grid.coords, grad)
    gnorm2 = np.sum(fr * fr, axis=-1)
    dist = grid.geodesic_distance(grid.coords, np.asarray(center, dtype=float))
    eta = 1.0 + gnorm2 / (delta0 * delta0) - 2.0 * dist * dist
    return np.maximum(eta, 0.0)


def frame_diag_sup(w_field):
    """Largest frame-diagonal entry of w per node (chart-norm proxy)."""
    n = w_field.frame.shape[-1]
    return np.max(np.stack([w_field.frame[..., i, i] for i in range(n)],
                           axis=-1), axis=-1)


def det_lower_bound_from_pair(pair):
    """Measured lower bound for e^{f(x) - g_t(y)} over the whole path.

    Pointwise the path log-density never exceeds the larger of the two
    endpoint log-densities, so the worst ratio pairs the source minimum
    with the pooled maximum.
    """
    lo = float(np.min(pair.mu.log_values))
    hi = max(float(np.max(pair.mu.log_values)),
             float(np.max(pair.nu.log_values)))
    return math.exp(lo - hi)


def assemble_torus_constants(pair):
    """Dichotomy-polynomial constants for a flat pair via the standard
    Young-inequality split of the drift terms.

    Returns a dict with the intermediate quantities so a report can show
    the assembly: the f-gradient part, the g-gradient and determinant
    part, their sum doubled (slack for the halved contraction), and the
    chart-loss factor applied to the constant term.
    """
    grid = pair.grid
    if not isinstance(grid, TorusGrid):
        raise ValidationError("flat constants need a torus grid")
    n = grid.dimension
    df = fd_gradient(grid, pair.mu.log_values)
    dg = fd_gradient(grid, pair.nu.log_values)
    sup_df = float(np.max(np.linalg.norm(df, axis=-1)))
    sup_dg_each = max(float(np.max(np.linalg.norm(df, axis=-1))),
                      float(np.max(np.linalg.norm(dg, axis=-1))))
    c7 = det_lower_bound_from_pair(pair)
    c1_part = 4.0 * sup_df ** 2
    c2_part = 4.0 * n * n * sup_dg_each ** 2 + 4.0 * n / c7
    c4 = 2.0 * (c1_part + c2_part)
    sigma = _LOSS_BASE ** (-11 * n)
    return {
        "sup_grad_f": sup_df,
        "sup_grad_g": sup_dg_each,
        "det_lower_bound": c7,
        "f_part": c1_part,
        "g_part": c2_part,
        "c4": c4,
        "chart_loss": sigma,
        "poly_c1": sigma * c4,
        "poly_c2": c4,
    }


def contraction_bounds(w_mat, max_cost_hessian=1.0):
    """Lower-bound chain for the contraction w^{ij} u_ki u_kj at a point
    of a flat chart, where u_ij = w_ij - delta_ij.

    Returns (contraction, w_sup - 2 n maxD2c, w_sup / 2).  The first
    inequality is algebra; the second needs w_sup >= 4 n maxD2c.
    """
    w = np.asarray(w_mat, dtype=float)
    n = w.shape[-1]
    u_hess = w - np.eye(n)
    contraction = float(np.trace(u_hess @ np.linalg.inv(w) @ u_hess))
    w_sup = float(np.max(np.diag(w)))
    return contraction, w_sup - 2.0 * n * max_cost_hessian, 0.5 * w_sup


@dataclass
class CutoffReport:
    """Pointwise audit of the flat maximum-principle inequality."""

    x_max: tuple              # chart point audited
    center: tuple             # cutoff center (Hessian argmax)
    eta_at_max: float
    w_sup_at_max: float       # |w|: max chart-diagonal entry
    lambda_max: float
    threshold: float          # sharpened cap; chain claims need |w| >= it
    threshold_met: bool
    lhs_direct: float         # w^{ij} eta_ij by finite differences
    lhs_assembled: float      # same via the differentiated equation
    assembly_mismatch: float
    contraction: float        # w^{ij} u_ki u_kj
    contraction_minus_tail: float  # |w| - 2 n maxD2c
    half_w_sup: float
    chain_holds: bool         # contraction >= tail bound >= |w| / 2
    bound_rhs: float          # |w|/(2 delta0^2) - c1' - c2' |w|^{2n-1}
    bound_margin: float       # lhs_direct - bound_rhs
    bound_holds: bool         # trivially true below threshold


def cl1_torus_check(pair, u, t, delta0, x_max=None):
    """Audit the flat-case pointwise inequality at the cutoff maximum.

    With eta the localized gradient weight centered at the Hessian
    argmax, the audit evaluates w^{ij} eta_ij two ways -- directly by
    finite differences, and through the identity

      w^{ij} eta_ij = (2/delta0^2) w^{ij} u_ki u_kj
                      + (2/delta0^2) u_k w^{ij} u_ijk - 4 w^{ii}

    with the third derivatives eliminated by the differentiated
    equation w^{ij} u_ijk = f_k - g_s(T) w_sk -- and then checks the
    resulting lower bound

      w^{ij} eta_ij >= |w| / (2 delta0^2) - c1' - c2' |w|^{2n-1}

    with the flat-pair constants.  The bound (and the contraction
    chain contraction >= |w| - 2n >= |w|/2) is only claimed above the
    sharpened threshold; below it the report says so and the audit is
    informational.
    """
    from .transport import hessian_metric, transport_map

    grid = pair.grid
    if not isinstance(grid, TorusGrid):
        raise ValidationError("the flat inequality audit needs a torus grid")
    n = grid.dimension
    map_field = transport_map(u)
    w_field = hessian_metric(u, map_field, require_positive=True)

    lam_values, lam_summary = lambda_field(w_field)
    center = np.asarray(lam_summary.location, dtype=float)
    eta = cutoff_test_function(u, delta0, center)
    w_sup_field = frame_diag_sup(w_field)
    if x_max is None:
        weight = eta * w_sup_field ** (1.0 / (11.0 * n))
        idx = np.unravel_index(int(np.argmax(weight)), grid.resolution)
    else:
        idx = tuple(int(i) for i in x_max)

    w = w_field.w[idx]
    w_inv = np.linalg.inv(w)
    hess_u = fd_hessian(grid, u.values)[idx]
    grad_u = fd_gradient(grid, u.values)[idx]
    inv_d2 = 1.0 / (delta0 * delta0)

    # direct evaluation of the cutoff contraction
    eta_hess = fd_hessian(grid, eta)[idx]
    lhs_direct = float(np.sum(w_inv * eta_hess))

    # assembled evaluation via the differentiated equation
    contraction = float(np.trace(hess_u @ w_inv @ hess_u))
    f_grad = fd_gradient(grid, pair.mu.log_values)[idx]
    g_grad = pair.rho(t).grad_at(map_field.target[idx])
    third_contracted = f_grad - g_grad @ w
    lhs_assembled = float(2.0 * inv_d2 * contraction
                          + 2.0 * inv_d2 * grad_u @ third_contracted
                          - 4.0 * np.trace(w_inv))

    consts = assemble_torus_constants(pair)
    maxd2c = grid.max_cost_hessian()
    threshold = consts["chart_loss"] * hessian_cap_constant(n, maxd2c)
    w_sup = float(w_sup_field[idx])
    threshold_met = w_sup >= threshold

    tail = w_sup - 2.0 * n * maxd2c
    chain_holds = bool(contraction >= tail - 1e-9
                       and (not threshold_met or tail >= 0.5 * w_sup))
    bound_rhs = (0.5 * w_sup * inv_d2 - consts["f_part"]
                 - consts["g_part"] * w_sup ** (2 * n - 1))
    margin = lhs_direct - bound_rhs
    return CutoffReport(
        x_max=tuple(float(c) for c in grid.coords[idx]),
        center=tuple(float(c) for c in center),
        eta_at_max=float(eta[idx]),
        w_sup_at_max=w_sup,
        lambda_max=float(lam_values[idx]),
        threshold=threshold,
        threshold_met=threshold_met,
        lhs_direct=lhs_direct,
        lhs_assembled=lhs_assembled,
        assembly_mismatch=abs(lhs_direct - lhs_assembled),
        contraction=contraction,
        contraction_minus_tail=tail,
        half_w_sup=0.5 * w_sup,
        chain_holds=chain_holds,
        bound_rhs=bound_rhs,
        bound_margin=margin,
        bound_holds=bool(margin >= 0.0 or not threshold_met),
    )


# -- squeeze chain --------------------------------------------------------


def l2_norm_sq(u, mu):
    """Squared L2 norm of u against the measure mu."""
    w = mu.cell_masses()
    return float(np.sum(u.values ** 2 * w) / np.sum(w))


def min_hessian_eigenvalue(u):
    """Smallest frame eigenvalue of the potential Hessian on the grid."""
    grid = u.grid
    hess = fd_hessian(grid, u.values)
    fr = grid.hessian_to_frame(grid.coords, hess)
    fr = 0.5 * (fr + np.swapaxes(fr, -1, -2))
    return float(np.min(np.linalg.eigvalsh(fr)))


def semiconvexity_check(u, bound, slack=1e-9):
    """Verify D^2 u >= -bound in the frame sense; raises otherwise."""
    low = min_hessian_eigenvalue(u)
    if low < -bound - slack:
        raise NotSemiconvex(
            f"Hessian eigenvalue {low:.6g} below the semiconvexity bound "
            f"-{bound:.6g}")
    return low


@dataclass
class GradientL2Report:
    """Observed gradient sup, squared L2 norm, and their power ratio."""

    grad_sup: float
    l2_sq: float
    ratio: float              # grad_sup^{n+4} / l2_sq
    min_hessian_eig: float
    exponent: int             # n + 4


def gradient_l2_report(u, mu, semiconvexity):
    """Measure the quantities of the gradient-from-L2 squeeze.

    Precondition: u is semiconvex to the stated bound (checked).  The
    returned ratio is what a calibrated constant must dominate for the
    bound grad_sup^{n+4} <= constant * ||u||^2 to hold.
    """
    low = semiconvexity_check(u, semiconvexity)
    grid = u.grid
    grad = fd_gradient(grid, u.values)
    fr = grid.covector_to_frame(grid.coords, grad)
    grad_sup = float(np.max(np.linalg.norm(fr, axis=-1)))
    l2_sq = l2_norm_sq(u, mu)
    exponent = grid.dimension + 4
    ratio = grad_sup ** exponent / l2_sq if l2_sq > 0 else 0.0
    return GradientL2Report(grad_sup, l2_sq, ratio, low, exponent)


def proof_gradient_constant(semiconvexity, mu_min, dimension):
    """Explicit constant of the ball-construction argument.

    A gradient of size b with Hessian bounded below by -A forces a dip
    of depth ~ 7 b^2 / (80 A) over a ball of radius ~ b / (11 A), so

      ||u||^2 >= mu_min * vol(B_1) * (b / 11 A)^n * (7 b^2 / 80 A)^2,

    equivalently b^{n+4} <= C * ||u||^2 with the value returned here.
    """
    if semiconvexity <= 0 or mu_min <= 0:
        raise ValidationError("semiconvexity and mu_min must be positive")
    n = int(dimension)
    ball = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
    return (11.0 ** n * (80.0 / 7.0) ** 2
            * semiconvexity ** (n + 2) / (mu_min * ball))


def gradient_bound_from_l2(l2_sq, constant, dimension):
    """Gradient sup predicted by the L2 squeeze:
    (constant * ||u||^2)^{1/(n+4)}."""
    if l2_sq < 0 or constant <= 0:
        raise ValidationError("l2_sq must be >= 0 and constant > 0")
    return float((constant * l2_sq) ** (1.0 / (dimension + 4)))


def l2_bound_from_distance(w2_sq, constant):
    """L2 bound predicted by the distance squeeze:
    constant * (W_2^2)^{1/8}."""
    if w2_sq < 0 or constant <= 0:
        raise ValidationError("w2_sq must be >= 0 and constant > 0")
    return float(constant * w2_sq ** 0.125)


def wasserstein_budget(delta0, grad_constant, l2_constant, dimension):
    """Largest W_2^2 for which the squeeze chain keeps |grad u| <= delta0:

    delta = (delta0^{n+4} / (grad_constant * l2_constant))^8.
    """
    if min(delta0, grad_constant, l2_constant) <= 0:
        raise ValidationError("budget inputs must be positive")
    n = int(dimension)
    return float((delta0 ** (n + 4) / (grad_constant * l2_constant)) ** 8)
