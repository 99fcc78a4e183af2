"""Single-loop bilevel optimisation with small-gain rate certificates."""

from .audit import AuditReport, SystemState, sector_audit, state_transform
from .certificate import (
    Multipliers,
    RateCertificate,
    auto_step_sizes,
    bisect_min_rho,
    build_transform,
    certified_rate,
    certify,
    construct_multipliers,
    hinf_first_order,
    max_step_sizes,
    small_gain_verdict,
)
from .errors import (
    CapabilityError,
    DivergenceDetected,
    InnerStall,
    InputError,
    InsufficientDecay,
    MultiplierInfeasible,
    SingleLoopError,
    SingularHessian,
    StepSizeInfeasible,
    TransformInfeasible,
    UnstableScaledSystem,
)
from .problem_model import BilevelOracle, GroundTruth, ProblemConstants, ValidationReport, validate_constants
from .solver import (
    SolverConfig,
    Trajectory,
    approx_gradient,
    double_loop_run,
    fit_rate,
    hypergradient_consistency,
    single_loop_run,
)
from .testbed import QuadraticInstance, as_oracle, derive_constants, ground_truth, make_instance

__version__ = "0.1.0"
