"""Exception types shared across the package.

Every error raised on a contract violation derives from :class:`OtLabError`
so callers can distinguish library failures from programming mistakes.
Solver failures carry enough state to diagnose the run post mortem.
"""

from __future__ import annotations


class OtLabError(Exception):
    """Base class for all library errors."""


class ValidationError(OtLabError, ValueError):
    """An input violated a documented precondition."""


class ConfigError(OtLabError):
    """A run configuration could not be parsed or failed validation."""


class ChartEquivalenceError(ValidationError):
    """A sphere chart band is too wide for the frame coordinates to stay
    within the 0.9 / 1.1 Euclidean-equivalence bounds."""


class CutLocusProximity(OtLabError):
    """Two points are too close to each other's cut locus for stable
    cost derivatives."""


class VectorTooLong(OtLabError):
    """A tangent vector exceeds the injectivity radius, so the exponential
    map is not invertible along it."""


class DisplacementTooLarge(OtLabError):
    """A candidate transport displacement leaves the region where the
    map x -> exp_x(grad u) is single-valued."""


class NotCConvex(OtLabError):
    """The candidate potential has w = D^2 u + D^2_x c not positive
    definite somewhere, so it is outside the admissible cone."""


class JacobianSignFlip(OtLabError):
    """det DT changed sign on the grid: the discrete map folds over."""


class NotSemiconvex(ValidationError):
    """A potential fails the D^2 u >= -A semiconvexity bound assumed by
    the gradient-from-L2 estimate."""


class SizeExceeded(ValidationError):
    """A discrete problem exceeds the supported atom budget."""


class InfeasibleMass(ValidationError):
    """Source and target masses differ beyond tolerance, so no coupling
    with the prescribed marginals exists."""


class LinearSolveStalled(OtLabError):
    """The inner Krylov solve for a Newton step failed to reach its
    tolerance within the iteration budget."""


class DampingFailed(OtLabError):
    """Backtracking reduced the Newton step below the minimum damping
    factor without finding an admissible decrease."""


class NewtonDiverged(OtLabError):
    """Newton at fixed path time failed to converge.

    Attributes
    ----------
    best_residual : float
        Smallest sup-norm residual seen before giving up.
    iterations : int
        Number of Newton iterations performed.
    """

    def __init__(self, message: str, *, best_residual: float = float("nan"),
                 iterations: int = 0):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class StepUnderflow(OtLabError):
    """The continuation step size shrank below its floor."""


class GuardViolated(OtLabError):
    """The Hessian guard saw lambda_max in the forbidden band (or beyond).

    Attributes
    ----------
    report : GuardReport
        Verdict and thresholds at the violating state.
    state : PathState | None
        The continuation state that tripped the guard, when available.
    """

    def __init__(self, message: str, *, report=None, state=None):
        super().__init__(message)
        self.report = report
        self.state = state


class MissingArtifacts(OtLabError):
    """A report was requested for a run directory with missing files."""
