"""Hybrid iLQR trajectory optimization with barrier-state and augmented-Lagrangian constraints."""

__version__ = "0.1.0"

from .auglag import ALState, OuterIterationRecord, active_penalty_matrix, augmented_cost, inner_solve, solve_al
from .constraints import (
    CircleObstacle,
    ConstraintSet,
    EllipseObstacle,
    HalfPlane,
    InputBox,
    constraint_from_dict,
    trajectory_feasible,
)
from .dbas import BarrierConfig, augment_system, barrier_dynamics, barrier_state, solve_dbas
from .errors import (
    GuardLocalizationFailure,
    HybridError,
    InfeasibleGoal,
    MissingTransition,
    NonPositiveDefiniteQuu,
    SamplingExhausted,
    TransversalityViolation,
    ZenoLimitExceeded,
)
from .hybrid import (
    HybridSystem,
    HybridTrajectory,
    Mode,
    Transition,
    TransitionEvent,
    linearize_step,
    rollout,
    saltation_matrix,
    step,
)
from .ilqr import (
    GainSchedule,
    QuadraticCost,
    SolverOptions,
    SolverReport,
    Status,
    backward_pass,
    forward_pass,
    solve,
)
