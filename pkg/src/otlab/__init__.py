"""Optimal-transport continuation solver with quantitative curvature
bounds.

The package solves the optimal-transport Jacobian equation on flat-torus
grids (and an equatorial sphere band) by a damped-Newton continuity
method, computes exact discrete Wasserstein distances for validation,
and verifies the quantitative curvature-bound machinery: the explicit
Hessian cap, the small-or-large dichotomy split, the pointwise audit at
the curvature maximum, and the gradient / distance budget chain that
together grant a run certificate.
"""

from .calibration import calibrate_family, measure_pair, rehearse
from .errors import (
    ConfigError,
    GuardViolated,
    MissingArtifacts,
    NewtonDiverged,
    NotCConvex,
    NotSemiconvex,
    OtLabError,
    StepUnderflow,
    ValidationError,
)
from .estimates import (
    ConstantsLedger,
    assemble_torus_constants,
    cl1_torus_check,
    cutoff_test_function,
    dichotomy_split,
    gradient_bound_from_l2,
    guard_check,
    hessian_cap_constant,
    lambda_field,
    make_ledger,
    wasserstein_budget,
)
from .estimator import MongeAmpereTransport
from .fields import (
    DensityField,
    Potential,
    load_density_csv,
    make_density,
    normalize_density,
    resample_density,
)
from .geometry import SphereChartGrid, TorusGrid, normalize_manifold
from .solver import Certificate, SolveResult, SolverConfig, continuity_solve
from .transport import TransportPair, hessian_metric, transport_map
from .wasserstein import density_to_atoms, exact_ot, sinkhorn

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "ConfigError",
    "ConstantsLedger",
    "DensityField",
    "GuardViolated",
    "MissingArtifacts",
    "MongeAmpereTransport",
    "NewtonDiverged",
    "NotCConvex",
    "NotSemiconvex",
    "OtLabError",
    "Potential",
    "SolveResult",
    "SolverConfig",
    "SphereChartGrid",
    "StepUnderflow",
    "TorusGrid",
    "TransportPair",
    "ValidationError",
    "assemble_torus_constants",
    "calibrate_family",
    "cl1_torus_check",
    "continuity_solve",
    "cutoff_test_function",
    "density_to_atoms",
    "dichotomy_split",
    "exact_ot",
    "gradient_bound_from_l2",
    "guard_check",
    "hessian_cap_constant",
    "hessian_metric",
    "lambda_field",
    "load_density_csv",
    "make_density",
    "make_ledger",
    "measure_pair",
    "normalize_density",
    "normalize_manifold",
    "rehearse",
    "resample_density",
    "sinkhorn",
    "transport_map",
    "wasserstein_budget",
    "__version__",
]
