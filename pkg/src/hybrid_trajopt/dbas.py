"""Barrier-state embedding of state constraints (interior-point style).

The physical state is augmented with a scalar barrier state

    w = sum_j B(g_j(x)) - sum_j B(g_j(x_goal)),    B(g) = -1/g,

whose time derivative ``sum_j g_x,j . xdot / g_j^2`` is integrated alongside the
physical flow and mapped through hybrid transitions by the augmented saltation
matrix. Any knot with ``g_j >= 0`` costs ``+inf`` so the line search never accepts
an infeasible iterate. Because ``w`` is re-synchronized from ``x`` at every knot,
the solver linearizes that re-synchronized step exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, trajectory_feasible
from .errors import InfeasibleGoal
from .hybrid import (
    HybridSystem,
    HybridTrajectory,
    Linearization,
    Mode,
    Transition,
    TransitionEvent,
    _compose_step,
    _fd_jacobian,
    _guard_gradient,
    _integrate,
    _reset_jacobian,
    rollout,
    segment_jacobian,
)
from .ilqr import QuadraticCost, SolverOptions, SolverReport, Status, position_error, solve


@dataclass(frozen=True)
class BarrierConfig:
    q_w: float = 1e-5
    q_wN: float | None = None  # defaults to q_w

    def __post_init__(self):
        if self.q_w < 0 or (self.q_wN is not None and self.q_wN < 0):
            raise ValueError("barrier weights must be non-negative")

    @property
    def terminal_weight(self) -> float:
        return self.q_w if self.q_wN is None else self.q_wN


def _goal_offset(cset: ConstraintSet, x_goal) -> float:
    if cset.size == 0:
        return 0.0
    g = cset.values(x_goal)
    if np.any(g >= 0.0):
        raise InfeasibleGoal(f"goal violates constraint rows {np.flatnonzero(g >= 0.0).tolist()}")
    return float(np.sum(-1.0 / g))


def barrier_state(cset: ConstraintSet, x, x_goal) -> float:
    """Barrier state at ``x``; ``+inf`` when any state constraint is violated."""
    cset = cset.state_only()
    offset = _goal_offset(cset, x_goal)
    if cset.size == 0:
        return 0.0
    g = cset.values(x)
    if np.any(g >= 0.0):
        return np.inf
    return float(np.sum(-1.0 / g)) - offset


def barrier_dynamics(cset: ConstraintSet, x, x_dot) -> float:
    """``dw/dt = sum_j g_x,j . xdot / g_j^2`` (requires all ``g_j < 0``)."""
    cset = cset.state_only()
    if cset.size == 0:
        return 0.0
    g, Gx, _ = cset.evaluate(x)
    return float(np.sum((Gx @ np.asarray(x_dot, dtype=float)) / g**2))


class _Barrier:
    """Raw barrier value and derivatives, finite on both sides of the boundary."""

    def __init__(self, cset: ConstraintSet, offset: float):
        self.cset = cset
        self.offset = offset
        self.H = cset.hessian_x()
        self.n = cset.state_dim
        used = np.flatnonzero(np.any(cset.ax != 0.0, axis=0) | np.any(cset.weight != 0.0, axis=0))
        self.cols = used
        self.const = cset.const
        self.ax = cset.ax[:, used]
        self.w = cset.weight[:, used]
        self.c = cset.center[:, used]

    def _g_cols(self, x):
        xc = x[self.cols]
        d = xc - self.c
        g = self.const + self.ax @ xc - (self.w * d * d).sum(axis=1)
        # exact zeros only occur on the boundary itself; keep the linearization finite
        g[g == 0.0] = -1e-300
        return g, self.ax - 2.0 * self.w * d

    def _g(self, x):
        g, Gc = self._g_cols(x)
        Gx = np.zeros((len(g), self.n))
        Gx[:, self.cols] = Gc
        return g, Gx

    def value(self, x) -> float:
        if self.cset.size == 0:
            return 0.0
        xc = x[self.cols]
        d = xc - self.c
        g = self.const + self.ax @ xc - (self.w * d * d).sum(axis=1)
        with np.errstate(divide="ignore"):
            return float(-(1.0 / g).sum()) - self.offset

    def gradient(self, x) -> np.ndarray:
        if self.cset.size == 0:
            return np.zeros(len(x))
        g, Gx = self._g(x)
        return (1.0 / g**2) @ Gx

    def rate(self, x, xdot) -> float:
        if self.cset.size == 0:
            return 0.0
        g, Gc = self._g_cols(x)
        return float(((Gc @ xdot[self.cols]) / (g * g)).sum())

    def rate_jacobian(self, x, xdot, Fx, Fu):
        """Derivatives of ``rate(x, f(x, u))`` w.r.t. ``x`` and ``u``."""
        if self.cset.size == 0:
            return np.zeros(len(x)), np.zeros(Fu.shape[1])
        g, Gx = self._g(x)
        inv2 = 1.0 / g**2
        gf = Gx @ xdot
        # sum_j [ (H_j f + F_x' g_x,j) / g_j^2 - 2 (g_x,j . f) g_x,j / g_j^3 ]
        Hf = np.einsum("jab,b->ja", self.H, xdot)
        dx = inv2 @ Hf + (inv2 @ Gx) @ Fx - 2.0 * ((gf * inv2 / g) @ Gx)
        du = (inv2 @ Gx) @ Fu
        return dx, du


def augment_system(
    sys: HybridSystem,
    cset: ConstraintSet,
    cfg: BarrierConfig = BarrierConfig(),
    x_goal=None,
    resync: bool = True,
) -> HybridSystem:
    """Hybrid system over ``[x; w]`` with the barrier state integrated in every mode.

    Resets keep ``w`` consistent with the post-reset physical state
    (``w+ = w + W(R(x)) - W(x)``). With ``resync`` the barrier state is recomputed
    from ``x`` at every knot to remove integration drift.
    """
    cset = cset.state_only()
    n = sys.state_dim
    if x_goal is None:
        x_goal = np.zeros(n)
    bar = _Barrier(cset, _goal_offset(cset, np.asarray(x_goal, dtype=float)))

    def lift_mode(name, mode: Mode) -> Mode:
        def field(t, xa, u):
            x = xa[:n]
            f = np.asarray(mode.field(t, x, u), dtype=float)
            out = np.empty(n + 1)
            out[:n] = f
            out[n] = bar.rate(x, f)
            return out

        def jacobian(t, xa, u):
            x = xa[:n]
            f = np.asarray(mode.field(t, x, u), dtype=float)
            if mode.jacobian is not None:
                Fx, Fu = mode.jacobian(t, x, u)
            else:
                Fx, Fu = _fd_jacobian(mode.field, t, x, u)
            m = Fu.shape[1]
            A = np.zeros((n + 1, n + 1))
            B = np.zeros((n + 1, m))
            A[:n, :n] = Fx
            B[:n] = Fu
            A[n, :n], B[n] = bar.rate_jacobian(x, f, Fx, Fu)
            return A, B

        def frozen_w(t, xa, u, h):
            # w is resynchronized at the knot, so only x needs integrating
            out = np.empty(n + 1)
            out[:n] = _integrate(sys, name, t, xa[:n], u, h)
            out[n] = xa[n]
            return out

        return Mode(field, jacobian, frozen_w if resync else None)

    def lift_transition(tr: Transition) -> Transition:
        def guard(t, xa, u):
            return tr.guard(t, xa[:n], u)

        def guard_gradient(t, xa, u):
            gx, gt = _guard_gradient(tr, t, xa[:n], u)
            return np.append(gx, 0.0), gt

        def reset(t, xa, u):
            x = xa[:n]
            xp = np.asarray(tr.reset(t, x, u), dtype=float)
            return np.append(xp, xa[n] + bar.value(xp) - bar.value(x))

        def reset_jacobian(t, xa, u):
            x = xa[:n]
            xp = np.asarray(tr.reset(t, x, u), dtype=float)
            Rx, Rt = _reset_jacobian(tr, t, x, u)
            Wp = bar.gradient(xp)
            J = np.zeros((n + 1, n + 1))
            J[:n, :n] = Rx
            J[n, :n] = Wp @ Rx - bar.gradient(x)
            J[n, n] = 1.0
            return J, np.append(Rt, Wp @ Rt)

        return Transition(tr.source, tr.target, guard, reset, guard_gradient, reset_jacobian)

    def knot_map(xa):
        out = xa.copy()
        out[n] = bar.value(xa[:n])
        return out

    return HybridSystem(
        modes={name: lift_mode(name, m) for name, m in sys.modes.items()},
        transitions=[lift_transition(tr) for tr in sys.transitions],
        state_dim=n + 1,
        control_dim=sys.control_dim,
        integrator=sys.integrator,
        max_events_per_step=sys.max_events_per_step,
        guard_tolerance=sys.guard_tolerance,
        max_bisections=sys.max_bisections,
        grazing_tolerance=sys.grazing_tolerance,
        guard_samples=sys.guard_samples,
        knot_map=knot_map if resync else None,
    )


def barrier_gradients(cset: ConstraintSet, X) -> np.ndarray:
    """``dW/dx`` at each row of ``X`` (state rows only), shape ``(K, n)``."""
    cset = cset.state_only()
    X = np.asarray(X, dtype=float)
    if cset.size == 0:
        return np.zeros_like(X)
    G = cset.values_many(X)
    G[G == 0.0] = -1e-300
    Gx, _ = cset.jacobians_many(X)
    return np.einsum("kj,kja->ka", 1.0 / (G * G), Gx)


def resynced_linearization(sys: HybridSystem, cset: ConstraintSet):
    """Exact Jacobians of the lifted step when ``w`` is re-synchronized at knots.

    The discrete map is ``x+ = Phi(x, u)`` and ``w+ = W(x+)``, so the barrier row
    is ``dW(x+) @ [A_x, B_x]`` and ``w`` itself has no downstream influence. The
    physical block (including the saltation composition through events) is the
    physical block of the augmented linearization; events reuse the physical
    block of the recorded augmented saltation matrices.
    """
    n, m = sys.state_dim, sys.control_dim

    def linearize(traj: HybridTrajectory) -> Linearization:
        N = traj.horizon
        X = traj.states[:, :n]
        A = np.zeros((N, n + 1, n + 1))
        B = np.zeros((N, n + 1, m))
        XI = np.broadcast_to(np.eye(n + 1), (N, n + 1, n + 1)).copy()
        by_step: dict[int, list] = {}
        for ev in traj.events:
            by_step.setdefault(ev.step_index, []).append(ev)
        for k in range(N):
            t = traj.t0 + k * traj.dt
            evs = by_step.get(k)
            if evs:
                phys = [
                    TransitionEvent(
                        ev.step_index, ev.event_time, ev.from_mode, ev.to_mode,
                        ev.state_pre[:n], ev.state_post[:n], ev.saltation[:n, :n],
                    )
                    for ev in evs
                ]
                Ax, Bx, _ = _compose_step(sys, traj.modes[k], t, X[k], traj.controls[k], traj.dt, phys)
                xi = np.eye(n + 1)
                for ev in evs:
                    xi = ev.saltation @ xi
                XI[k] = xi
            else:
                Ax, Bx = segment_jacobian(sys, traj.modes[k], t, X[k], traj.controls[k], traj.dt)
            A[k, :n, :n] = Ax
            B[k, :n] = Bx
        dW = barrier_gradients(cset, X[1:])
        A[:, n, :n] = np.einsum("ka,kab->kb", dW, A[:, :n, :n])
        B[:, n] = np.einsum("ka,kab->kb", dW, B[:, :n])
        return Linearization(A, B, XI)

    return linearize


class BarrierCost:
    """Quadratic cost on ``[x; w]`` that is ``+inf`` at any knot violating a constraint."""

    def __init__(self, base: QuadraticCost, cset: ConstraintSet, cfg: BarrierConfig):
        n = base.Q.shape[0]
        Q = np.zeros((n + 1, n + 1))
        Q[:n, :n] = base.Q
        Q[n, n] = cfg.q_w
        QT = np.zeros((n + 1, n + 1))
        QT[:n, :n] = base.Q_terminal
        QT[n, n] = cfg.terminal_weight
        self.quad = QuadraticCost(Q, base.R, QT, np.append(base.x_goal, 0.0))
        self.x_goal = self.quad.x_goal
        self.cset = cset.state_only()
        self.n = n

    def knot_values(self, traj: HybridTrajectory) -> np.ndarray:
        return self.cset.values_many(traj.states[:, : self.n])

    def total(self, traj: HybridTrajectory) -> float:
        if self.cset.size and np.any(self.knot_values(traj) >= 0.0):
            return np.inf
        return self.quad.total(traj)

    def stage_derivatives(self, traj):
        return self.quad.stage_derivatives(traj)

    def terminal_derivatives(self, x):
        return self.quad.terminal_derivatives(x)


def input_clamp(cset: ConstraintSet, control_dim: int):
    boxes = cset.input_boxes()
    if not boxes:
        return None
    lo = np.full(control_dim, -np.inf)
    hi = np.full(control_dim, np.inf)
    for b in boxes:
        lo[b.index] = max(lo[b.index], b.u_min)
        hi[b.index] = min(hi[b.index], b.u_max)
    return lambda u: np.clip(u, lo, hi)


def solve_dbas(
    sys: HybridSystem,
    x0,
    mode0,
    u_init,
    cost: QuadraticCost,
    cset: ConstraintSet,
    cfg: BarrierConfig = BarrierConfig(),
    opts: SolverOptions = SolverOptions(),
    *,
    dt: float,
    attempt_infeasible: bool = False,
    diagnostics=None,
) -> SolverReport:
    """Barrier-state HiLQR.

    An infeasible initial rollout returns status ``InfeasibleStart`` unless
    ``attempt_infeasible`` is set, in which case the solve proceeds; the first
    accepted iterate is then necessarily feasible.
    """
    n = sys.state_dim
    aug = augment_system(sys, cset, cfg, cost.x_goal)
    bcost = BarrierCost(cost, cset, cfg)
    clamp = input_clamp(cset, sys.control_dim)
    x0a = np.append(np.asarray(x0, dtype=float), 0.0)
    u0 = np.asarray(u_init, dtype=float).reshape(-1, sys.control_dim)
    if clamp is not None:
        u0 = np.array([clamp(u) for u in u0]).reshape(u0.shape)
    init = rollout(aug, x0a, mode0, u0, dt)
    worst: list[float] = []
    state_set = cset.state_only()

    def record(traj):
        worst.append(float(np.max(state_set.values_many(traj.states[:, :n]))) if state_set.size else -np.inf)

    feasible, _ = trajectory_feasible(state_set, init)
    if not feasible and not attempt_infeasible:
        record(init)
        return SolverReport(
            status=Status.INFEASIBLE_START,
            iterations=0,
            cost_history=[np.inf],
            trajectory=_physical(init, n),
            final_position_error=position_error(init, cost.x_goal, opts.position_indices),
            constraint_history=worst,
            message="initial rollout violates constraints",
        )
    rep = solve(
        aug,
        x0a,
        mode0,
        u0,
        bcost,
        opts,
        dt=dt,
        control_filter=clamp,
        on_accept=record,
        diagnostics=diagnostics,
        initial=init,
        linearize=resynced_linearization(sys, cset),
    )
    rep.constraint_history = worst
    rep.barrier_states = rep.trajectory.states[:, n].copy()
    rep.trajectory = _physical(rep.trajectory, n)
    if not feasible and rep.iterations > 0 and not np.isfinite(rep.cost_history[-1]):
        rep.status = Status.NUMERICAL_FAILURE
        rep.message = rep.message or "no feasible iterate found from an infeasible start"
    return rep


def _physical(traj: HybridTrajectory, n: int) -> HybridTrajectory:
    """Drop the barrier state; events keep their augmented vectors."""
    return HybridTrajectory(
        traj.states[:, :n].copy(), traj.controls, traj.modes, traj.events, traj.dt, traj.t0
    )
