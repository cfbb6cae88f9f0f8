"""Optimal control of partially observed continuous-time Markov chains.

Construction of controlled chains by Poisson thinning, Wonham filtering of
the hidden state, reward estimation under three equivalent formulations,
monotone grid solvers for the dynamic programming equations, feedback
synthesis with Monte Carlo verification, and the adjoint-equation optimality
check.
"""

from .backend import get_backend
from .chain import (
    ChainPath,
    ControlPath,
    DrivingNoise,
    compensator_residual,
    sample_driving,
    simulate_physical,
    thin_chain,
)
from .errors import (
    BatchTooSmall,
    BoundViolation,
    CflViolation,
    ConfigError,
    ControlUndefined,
    GridMismatch,
    InconsistentHorizon,
    IntensityTooSmall,
    NegativeRate,
    NoConvergence,
    NonFiniteState,
    NotOpenLoop,
    OutOfBoundsStencil,
    PocmcError,
    RegressionRankDeficient,
    StepTooLarge,
)
from .filtering import (
    FilterEstimate,
    FilterPath,
    integrate_filter,
    integrate_filter_batch,
    oracle_filter_openloop,
    step_em,
    step_robust,
)
from .hjb import (
    FeedbackPolicy,
    LocalCoefficients,
    SpatialGrid,
    ValueGrid,
    extract_policy,
    hamiltonian_bracket,
    local_coefficients,
    simulate_closed_loop,
    solve_elliptic,
    solve_parabolic,
    verify_optimality,
)
from .measure import (
    DensityPath,
    estimator_report,
    girsanov_density,
    reward_physical,
    reward_reference,
    reward_separated,
    truncation_tail_bound,
)
from .model import (
    ControlModel,
    load_model,
    model_from_dict,
    model_to_dict,
    reward_from_jump_costs,
    save_model,
    validate_model,
)
from .smp import AdjointPath, check_max_principle, hamiltonian_smp, solve_adjoint

__version__ = "0.1.0"
