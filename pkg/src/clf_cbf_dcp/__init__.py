"""Safe stabilization with a CLF-CBF complementarity controller and QP baselines."""

from .analysis import (
    BoundarySample,
    KBoundResult,
    classify_boundary,
    continuity_probe,
    dcp_equilibrium_residual,
    k_lower_bound,
    qp_equilibrium_residual,
    sample_boundary,
)
from .certificates import (
    CertificateFunction,
    ClassKFunction,
    ControlAffineSystem,
    LieData,
    Scenario,
    cbf_admissible,
    clf_admissible,
    lie_derivatives,
    linear_class_k,
    make_case1_scenario,
    make_case2_scenario,
    make_switching_scenario,
)
from .controllers import (
    CbfQpController,
    ControlOutput,
    DcpController,
    DcpControllerConfig,
    PenaltyQpController,
    build_controller,
    cbf_qp_control,
    compute_wp,
    dcp_control,
    min_norm_nominal,
    penalty_clf_cbf_qp_control,
)
from .lcp import LcpSolution, TriangularLcp, brute_force_lcp, solve_scalar_lcp, solve_triangular_lcp
from .simulation import (
    IntegratorConfig,
    Outcome,
    OutcomeKind,
    TrajectoryRecord,
    closed_loop_field,
    integrate,
    monitor_invariants,
)

__version__ = "0.1.0"
