"""Hybrid iLQR: saltation-aware backward pass, closed-loop forward pass, solve loop."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import HybridError, NonPositiveDefiniteQuu
from .hybrid import HybridSystem, HybridTrajectory, Linearization, linearize_trajectory, rollout, step

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e8


class CostModel(Protocol):
    """Running cost ``l_k(x, u)`` and terminal cost ``l_N(x)`` with derivatives.

    ``stage_derivatives`` returns arrays stacked over the horizon:
    ``lx (N, n), lu (N, m), lxx (N, n, n), luu (N, m, m), lux (N, m, n)``.
    """

    x_goal: np.ndarray

    def total(self, traj: HybridTrajectory) -> float: ...

    def stage_derivatives(self, traj: HybridTrajectory): ...

    def terminal_derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class QuadraticCost:
    """``1/2 (x-x_g)' Q (x-x_g) + 1/2 u' R u`` per step, ``1/2 (x-x_g)' Q_T (x-x_g)`` at the end."""

    Q: np.ndarray
    R: np.ndarray
    Q_terminal: np.ndarray
    x_goal: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.Q_terminal = np.asarray(self.Q_terminal, dtype=float)
        self.x_goal = np.asarray(self.x_goal, dtype=float)
        for name in ("Q", "R", "Q_terminal"):
            M = getattr(self, name)
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12 or np.linalg.eigvalsh(self.Q_terminal).min() < -1e-12:
            raise ValueError("state weights must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ValueError("R must be positive definite")

    def stage_costs(self, X, U) -> np.ndarray:
        dX = X - self.x_goal
        return 0.5 * np.einsum("ki,ij,kj->k", dX, self.Q, dX) + 0.5 * np.einsum(
            "ki,ij,kj->k", U, self.R, U
        )

    def terminal(self, x) -> float:
        dx = x - self.x_goal
        return 0.5 * float(dx @ self.Q_terminal @ dx)

    def total(self, traj: HybridTrajectory) -> float:
        X, U = traj.states, traj.controls
        return float(np.sum(self.stage_costs(X[:-1], U))) + self.terminal(X[-1])

    def stage_derivatives(self, traj: HybridTrajectory):
        X, U = traj.states[:-1], traj.controls
        N, n, m = len(U), self.Q.shape[0], self.R.shape[0]
        lx = (X - self.x_goal) @ self.Q
        lu = U @ self.R
        lxx = np.broadcast_to(self.Q, (N, n, n))
        luu = np.broadcast_to(self.R, (N, m, m))
        lux = np.zeros((N, m, n))
        return lx, lu, lxx, luu, lux

    def terminal_derivatives(self, x):
        return self.Q_terminal @ (x - self.x_goal), self.Q_terminal


@dataclass
class GainSchedule:
    K: np.ndarray  # (N, m, n)
    d: np.ndarray  # (N, m)
    dV1: float  # linear-in-alpha predicted change
    dV2: float  # quadratic-in-alpha predicted change
    Vx0: np.ndarray | None = None
    Qx: np.ndarray | None = None
    Qu: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return len(self.d)

    def predicted_change(self, alpha: float) -> float:
        return alpha * self.dV1 + alpha * alpha * self.dV2


@dataclass
class SolverOptions:
    max_iterations: int = 150
    cost_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-6
    alphas: tuple = tuple(0.5**i for i in range(11))
    armijo: float = 1e-4
    rho_init: float = 1e-6
    rho_min: float = 1e-8
    rho_max: float = 1e8
    rho_increase: float = 10.0
    rho_decrease: float = 2.0
    # rejected line searches that push rho this high count as a zero decrease;
    # a small rho says nothing yet, since stiff (large-penalty) costs need heavy damping
    stall_rho: float = 1e2
    goal_tolerance: float = 5e-2
    position_indices: tuple = (0, 1)

    def __post_init__(self):
        if min(self.cost_tolerance, self.gradient_tolerance, self.goal_tolerance) <= 0:
            raise ValueError("tolerances must be positive")
        a = np.asarray(self.alphas)
        if a.size == 0 or a[0] > 1.0 or a[-1] <= 0.0 or np.any(np.diff(a) >= 0):
            raise ValueError("alpha schedule must be strictly decreasing in (0, 1]")


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"
    INFEASIBLE_START = "InfeasibleStart"
    MAX_OUTER_ITERATIONS = "MaxOuterIterations"
    PENALTY_OVERFLOW = "PenaltyOverflow"


@dataclass
class SolverReport:
    status: Status
    iterations: int
    cost_history: list[float]
    trajectory: HybridTrajectory
    final_position_error: float
    event_counts: list[int] = field(default_factory=list)
    mode_sequences: list[list] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    constraint_history: list[float] = field(default_factory=list)
    outer_records: list = field(default_factory=list)
    barrier_states: np.ndarray | None = None
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]


def position_error(traj: HybridTrajectory, x_goal, indices=(0, 1)) -> float:
    idx = list(indices)
    return float(np.linalg.norm(traj.states[-1, idx] - np.asarray(x_goal)[idx]))


# ---------------------------------------------------------------------------


def backward_pass(
    sys: HybridSystem,
    traj: HybridTrajectory,
    cost: CostModel,
    rho: float,
    lin: Linearization | None = None,
    keep_q: bool = False,
) -> GainSchedule:
    """Riccati-like recursion with event steps mapped through their saltation matrices.

    ``lin.A``/``lin.B`` already hold ``Xi @ f_x`` and ``Xi @ f_u`` for event steps.
    """
    if lin is None:
        lin = linearize_trajectory(sys, traj)
    N, n, m = traj.horizon, sys.state_dim, sys.control_dim
    lx, lu, lxx, luu, lux = cost.stage_derivatives(traj)
    Vx, Vxx = cost.terminal_derivatives(traj.states[-1])
    Vx, Vxx = np.array(Vx, dtype=float), np.array(Vxx, dtype=float)
    K = np.zeros((N, m, n))
    d = np.zeros((N, m))
    Qx_all = np.zeros((N, n)) if keep_q else None
    Qu_all = np.zeros((N, m)) if keep_q else None
    dV1 = dV2 = 0.0
    reg = rho * np.eye(m)
    for k in range(N - 1, -1, -1):
        A, B = lin.A[k], lin.B[k]
        Qx = lx[k] + A.T @ Vx
        Qu = lu[k] + B.T @ Vx
        VA = Vxx @ A
        VB = Vxx @ B
        Qxx = lxx[k] + A.T @ VA
        Quu = luu[k] + B.T @ VB
        Qux = lux[k] + B.T @ VA
        if keep_q:
            Qx_all[k], Qu_all[k] = Qx, Qu
        Quu_reg = Quu + reg
        try:
            L = np.linalg.cholesky(Quu_reg)
        except np.linalg.LinAlgError:
            raise NonPositiveDefiniteQuu(f"Q_uu not positive definite at step {k} (rho={rho:g})") from None
        if not np.all(np.isfinite(L)):
            raise NonPositiveDefiniteQuu(f"non-finite Q_uu at step {k}")
        rhs = np.column_stack([Qu, Qux])
        sol = -np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        d[k] = sol[:, 0]
        K[k] = sol[:, 1:]
        Kk, dk = K[k], d[k]
        Vx = Qx + Kk.T @ (Quu @ dk) + Kk.T @ Qu + Qux.T @ dk
        Vxx = Qxx + Kk.T @ Quu @ Kk + Kk.T @ Qux + Qux.T @ Kk
        Vxx = 0.5 * (Vxx + Vxx.T)
        dV1 += float(dk @ Qu)
        dV2 += 0.5 * float(dk @ Quu @ dk)
    return GainSchedule(K, d, dV1, dV2, Vx0=Vx, Qx=Qx_all, Qu=Qu_all)


def forward_pass(
    sys: HybridSystem,
    traj: HybridTrajectory,
    gains: GainSchedule,
    alpha: float,
    cost: CostModel,
    control_filter: Callable[[np.ndarray], np.ndarray] | None = None,
):
    """Closed-loop rollout ``u = u_k + K_k (x - x_k) + alpha d_k`` with fresh event detection.

    Returns ``(trajectory, cost)``; a diverging or failing rollout gives ``(None, inf)``.
    """
    N = traj.horizon
    X, U = traj.states, traj.controls
    x = X[0].copy()
    mode = traj.modes[0]
    states = np.empty_like(X)
    controls = np.empty_like(U)
    states[0] = x
    modes = [mode]
    events = []
    try:
        for k in range(N):
            if mode == traj.modes[k]:
                u = U[k] + gains.K[k] @ (x - X[k]) + alpha * gains.d[k]
            else:
                # state difference across a jump is not a small perturbation
                u = U[k] + alpha * gains.d[k]
            if control_filter is not None:
                u = control_filter(u)
            controls[k] = u
            x, mode, evs = step(sys, mode, traj.t0 + k * traj.dt, x, u, traj.dt, step_index=k)
            r2 = float(x @ x)
            if not r2 < DIVERGENCE_NORM**2:  # also catches nan
                return None, np.inf
            states[k + 1] = x
            modes.append(mode)
            events.extend(evs)
    except HybridError as err:
        log.debug("forward pass rejected: %s", err)
        return None, np.inf
    new = HybridTrajectory(states, controls, modes, events, traj.dt, traj.t0)
    J = cost.total(new)
    if np.isnan(J):
        J = np.inf
    return new, J


def _normalized_step(gains: GainSchedule, U: np.ndarray) -> float:
    if gains.horizon == 0:
        return 0.0
    return float(np.max(np.max(np.abs(gains.d), axis=1) / (np.max(np.abs(U), axis=1) + 1.0)))


def solve(
    sys: HybridSystem,
    x0,
    mode0,
    u_init,
    cost: CostModel,
    opts: SolverOptions = SolverOptions(),
    *,
    dt: float,
    control_filter: Callable[[np.ndarray], np.ndarray] | None = None,
    on_accept: Callable[[HybridTrajectory], None] | None = None,
    diagnostics: Callable[[dict], None] | None = None,
    initial: HybridTrajectory | None = None,
    linearize: Callable[[HybridTrajectory], Linearization] | None = None,
) -> SolverReport:
    """Unconstrained hybrid iLQR.

    Stops when the relative cost decrease (actual or predicted) falls below
    ``cost_tolerance``, when the normalized feedforward step falls below
    ``gradient_tolerance``, or after ``max_iterations``. Consecutive
    rejected line searches that drive rho up to ``stall_rho`` count as a zero
    decrease (or as a numerical failure while the cost is still infinite).
    """
    u_init = np.asarray(u_init, dtype=float).reshape(-1, sys.control_dim)
    if control_filter is not None:
        u_init = np.array([control_filter(u) for u in u_init]).reshape(u_init.shape)
    traj = initial if initial is not None else rollout(sys, x0, mode0, u_init, dt)
    J = cost.total(traj)
    if np.isnan(J):
        J = np.inf
    history = [J]
    counts = [int(len(traj.events))]
    modes = [list(traj.modes)]
    records: list[dict] = []
    if on_accept is not None:
        on_accept(traj)
    rho = opts.rho_init
    status = Status.MAX_ITERATIONS
    message = ""
    lin = None

    def emit(rec):
        records.append(rec)
        if diagnostics is not None:
            diagnostics(rec)

    it = 0
    while it < opts.max_iterations:
        it += 1
        if lin is None:
            lin = linearize(traj) if linearize is not None else linearize_trajectory(sys, traj)
        try:
            gains = backward_pass(sys, traj, cost, rho, lin)
        except NonPositiveDefiniteQuu:
            rho *= opts.rho_increase
            history.append(J)
            emit({"iteration": it, "cost": J, "alpha": None, "rho": rho, "events": len(traj.events)})
            if rho > opts.rho_max:
                status, message = Status.NUMERICAL_FAILURE, "regularization exceeded its bound"
                break
            continue
        if _normalized_step(gains, traj.controls) < opts.gradient_tolerance:
            history.append(J)
            status = Status.CONVERGED
            emit({"iteration": it, "cost": J, "alpha": 0.0, "rho": rho, "events": len(traj.events)})
            break
        expected = -gains.predicted_change(1.0)
        if np.isfinite(J) and expected < opts.cost_tolerance * max(abs(J), 1e-12):
            history.append(J)
            status = Status.CONVERGED
            emit({"iteration": it, "cost": J, "alpha": 0.0, "rho": rho, "events": len(traj.events)})
            break
        accepted = None
        for alpha in opts.alphas:
            cand, Jc = forward_pass(sys, traj, gains, alpha, cost, control_filter)
            if cand is None or not np.isfinite(Jc):
                continue
            if not np.isfinite(J):
                accepted = (alpha, cand, Jc)
                break
            predicted = -gains.predicted_change(alpha)
            if J - Jc >= opts.armijo * predicted and Jc <= J:
                accepted = (alpha, cand, Jc)
                break
        if accepted is None:
            rho *= opts.rho_increase
            history.append(J)
            emit({"iteration": it, "cost": J, "alpha": None, "rho": rho, "events": len(traj.events)})
            if rho > opts.rho_max:
                status, message = Status.NUMERICAL_FAILURE, "line search failed at maximum regularization"
                break
            if rho >= opts.stall_rho:
                if np.isfinite(J):
                    status, message = Status.CONVERGED, "line search stalled"
                else:
                    status, message = Status.NUMERICAL_FAILURE, "no finite-cost candidate found"
                break
            continue
        alpha, traj, J_new = accepted
        lin = None
        rel = (J - J_new) / max(abs(J), 1e-12) if np.isfinite(J) else np.inf
        J = J_new
        history.append(J)
        counts.append(int(len(traj.events)))
        modes.append(list(traj.modes))
        if on_accept is not None:
            on_accept(traj)
        rho = max(rho / opts.rho_decrease, opts.rho_min)
        emit({"iteration": it, "cost": J, "alpha": alpha, "rho": rho, "events": len(traj.events)})
        if rel < opts.cost_tolerance:
            status = Status.CONVERGED
            break
    return SolverReport(
        status=status,
        iterations=len(history) - 1,
        cost_history=history,
        trajectory=traj,
        final_position_error=position_error(traj, cost.x_goal, opts.position_indices),
        event_counts=counts,
        mode_sequences=modes,
        diagnostics=records,
        message=message,
    )


def diagnostics_printer(stream) -> Callable[[dict], None]:
    """Line-delimited JSON writer for per-iteration records."""

    def write(rec: dict):
        stream.write(json.dumps(rec, default=float) + "\n")

    return write
