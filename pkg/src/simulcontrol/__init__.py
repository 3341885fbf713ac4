"""Simultaneous control of parameter-dependent linear systems."""

from .core_dynamics import (
    ControlSignal,
    IntegrationDivergence,
    LinearResponse,
    TimeGrid,
    Trajectory,
    integrate_adjoint,
    integrate_forward,
    l2_inner,
    l2_norm_sq,
    propagate_exact,
)
from .cost_model import CostPrediction, predicted_costs, rate_constant_cg, rate_constant_gd, sgd_threshold
from .objective import (
    ControlProblem,
    Evaluation,
    GradientSample,
    SolveCounter,
    apply_cg_operator,
    cg_rhs,
    evaluate,
    gradient_full,
    gradient_single,
    gradient_variance,
    lift,
    lift_adjoint,
)
from .optimizers import (
    Adaptive,
    CGBreakdown,
    Constant,
    CsgState,
    RobbinsMonro,
    RunReport,
    SolverDivergence,
    StopRule,
    csg_weights,
    run_cg,
    run_csg,
    run_gd,
    run_sgd,
)
from .parametric_systems import (
    AugmentedSystem,
    ControllabilityReport,
    ParameterSet,
    ParametricSystem,
    SystemFileError,
    assemble_augmented,
    build_brunovsky,
    build_cart_pendulum,
    condition_number,
    gramian,
    hautus_check,
    load_system,
    save_system,
)
from .problems import brunovsky_problem, cart_pendulum_problem

__version__ = "0.1.0"
