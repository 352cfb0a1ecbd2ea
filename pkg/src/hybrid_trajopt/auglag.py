"""Augmented-Lagrangian constraint handling on top of hybrid iLQR.

Inner loop: unconstrained HiLQR on

    L_A = l_N + (lam_N + 1/2 I_mu g_N)' g_N + sum_k [ l_k + (lam_k + 1/2 I_mu g_k)' g_k ]

with multipliers and penalties frozen. Outer loop:
``lam <- max(0, lam + mu g)``, ``mu <- phi mu`` until the worst violation
``max(0, g)`` drops below tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .constraints import ConstraintSet
from .hybrid import HybridSystem, HybridTrajectory
from .ilqr import QuadraticCost, SolverOptions, SolverReport, Status, solve


def active_penalty_matrix(g, lam, mu) -> np.ndarray:
    """Diagonal ``I_mu``: 0 where ``g_i < 0`` and ``lam_i == 0``, else ``mu_i``."""
    return np.diag(active_penalty(g, lam, mu))


def active_penalty(g, lam, mu) -> np.ndarray:
    g, lam = np.asarray(g, dtype=float), np.asarray(lam, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), g.shape)
    return np.where((g < 0.0) & (lam == 0.0), 0.0, mu)


@dataclass
class ALState:
    """Multipliers (per knot, per row) and penalties for one problem.

    ``lam[k]`` for ``k < N`` covers every row of the set; ``lam_N`` covers the
    state-only rows at the terminal knot. Penalties share one scalar schedule.
    """

    lam: np.ndarray  # (N, m)
    lam_N: np.ndarray  # (m_state,)
    mu: float = 1.0
    mu0: float = 1.0
    phi: float = 10.0
    constraint_tolerance: float = 1e-4
    max_outer_iterations: int = 20
    mu_max: float = 1e8
    # relative cost tolerance of inner solves while constraints are still violated
    intermediate_cost_tolerance: float = 1e-4

    def __post_init__(self):
        if self.phi <= 1.0:
            raise ValueError("penalty growth factor must exceed 1")
        if self.mu0 <= 0.0:
            raise ValueError("initial penalty must be positive")

    @classmethod
    def initial(cls, N: int, cset: ConstraintSet, **kw) -> "ALState":
        mu0 = kw.pop("mu0", 1.0)
        return cls(
            lam=np.zeros((N, cset.size)),
            lam_N=np.zeros(cset.state_only().size),
            mu=mu0,
            mu0=mu0,
            **kw,
        )

    def penalties(self) -> np.ndarray:
        """Per-knot penalty array (all entries share the scalar schedule)."""
        return np.full(self.lam.shape, self.mu)


@dataclass
class OuterIterationRecord:
    outer: int
    inner_iterations: int
    max_violation: float
    augmented_cost: float
    true_cost: float
    mu: float
    status: str


class AugmentedCost:
    """``L_A`` for fixed multipliers; derivatives use the Gauss-Newton penalty Hessian."""

    def __init__(self, base: QuadraticCost, cset: ConstraintSet, al: ALState, active=None):
        self.base = base
        self.cset = cset
        self.term = cset.state_only()
        self.al = al
        self.x_goal = base.x_goal
        # rows disabled for the current outer iteration
        self.mask = np.ones(cset.size, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        term_rows = np.array(
            [i for i in range(cset.size) if not np.any(cset.au[i] != 0.0)], dtype=int
        )
        self.mask_N = self.mask[term_rows] if cset.size else np.ones(0, dtype=bool)

    def _stage_g(self, traj):
        n = self.cset.state_dim
        return self.cset.values_many(traj.states[:-1, :n], traj.controls)

    def penalty_terms(self, traj: HybridTrajectory) -> tuple[np.ndarray, float]:
        al = self.al
        G = self._stage_g(traj)
        I = active_penalty(G, al.lam, al.mu) * self.mask
        stage = np.sum((al.lam * self.mask + 0.5 * I * G) * G, axis=1)
        gN = self.term.values(traj.states[-1, : self.cset.state_dim])
        IN = active_penalty(gN, al.lam_N, al.mu) * self.mask_N
        terminal = float(np.sum((al.lam_N * self.mask_N + 0.5 * IN * gN) * gN))
        return stage, terminal

    def total(self, traj: HybridTrajectory) -> float:
        J = self.base.total(traj)
        if self.cset.size == 0:
            return J
        stage, terminal = self.penalty_terms(traj)
        return J + float(np.sum(stage)) + terminal

    def stage_derivatives(self, traj):
        lx, lu, lxx, luu, lux = self.base.stage_derivatives(traj)
        if self.cset.size == 0:
            return lx, lu, lxx, luu, lux
        al = self.al
        n = self.cset.state_dim
        X = traj.states[:-1, :n]
        G = self.cset.values_many(X, traj.controls)
        Gx, Gu = self.cset.jacobians_many(X)
        I = active_penalty(G, al.lam, al.mu) * self.mask
        c = al.lam * self.mask + I * G
        lx = lx + np.einsum("kij,ki->kj", Gx, c)
        lu = lu + np.einsum("kij,ki->kj", Gu, c)
        lxx = lxx + np.einsum("kia,ki,kib->kab", Gx, I, Gx)
        luu = luu + np.einsum("kia,ki,kib->kab", Gu, I, Gu)
        lux = lux + np.einsum("kia,ki,kib->kab", Gu, I, Gx)
        return lx, lu, lxx, luu, lux

    def terminal_derivatives(self, x):
        Vx, Vxx = self.base.terminal_derivatives(x)
        if self.term.size == 0:
            return Vx, Vxx
        n = self.cset.state_dim
        g, Gx, _ = self.term.evaluate(x[:n])
        IN = active_penalty(g, self.al.lam_N, self.al.mu) * self.mask_N
        Vx = Vx + Gx.T @ (self.al.lam_N * self.mask_N + IN * g)
        Vxx = Vxx + Gx.T @ (IN[:, None] * Gx)
        return Vx, Vxx


def augmented_cost(cost: QuadraticCost, cset: ConstraintSet, traj: HybridTrajectory, al: ALState) -> float:
    return AugmentedCost(cost, cset, al).total(traj)


def max_violation(cset: ConstraintSet, traj: HybridTrajectory, active=None) -> float:
    """Worst ``max(0, g)`` over all knots (terminal knot: state rows only)."""
    if cset.size == 0:
        return 0.0
    n = cset.state_dim
    mask = np.ones(cset.size, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    G = cset.values_many(traj.states[:-1, :n], traj.controls)[:, mask]
    worst = float(np.max(G)) if G.size else -np.inf
    state_rows = ~np.any(cset.au != 0.0, axis=1)
    gN = cset.values(traj.states[-1, :n])[state_rows & mask]
    if gN.size:
        worst = max(worst, float(np.max(gN)))
    return max(0.0, worst)


def _terminal_values(cset: ConstraintSet, x) -> np.ndarray:
    return cset.state_only().values(x[: cset.state_dim])


def update_multipliers(al: ALState, cset: ConstraintSet, traj: HybridTrajectory, active=None):
    """``lam <- max(0, lam + mu g)`` then ``mu <- phi mu`` (in place)."""
    n = cset.state_dim
    mask = np.ones(cset.size, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    G = cset.values_many(traj.states[:-1, :n], traj.controls)
    al.lam = np.where(mask, np.maximum(0.0, al.lam + al.mu * G), al.lam)
    state_rows = ~np.any(cset.au != 0.0, axis=1)
    gN = _terminal_values(cset, traj.states[-1])
    mN = mask[state_rows]
    al.lam_N = np.where(mN, np.maximum(0.0, al.lam_N + al.mu * gN), al.lam_N)
    al.mu = al.mu * al.phi


def inner_solve(sys, x0, mode0, u_init, cost, cset, al, opts=SolverOptions(), *, dt, active=None, diagnostics=None):
    """HiLQR on the augmented Lagrangian with ``al`` frozen."""
    return solve(sys, x0, mode0, u_init, AugmentedCost(cost, cset, al, active), opts, dt=dt, diagnostics=diagnostics)


def solve_al(
    sys: HybridSystem,
    x0,
    mode0,
    u_init,
    cost: QuadraticCost,
    cset: ConstraintSet,
    al: ALState | None = None,
    opts: SolverOptions = SolverOptions(),
    *,
    dt: float,
    activate_after: dict[int, int] | None = None,
    diagnostics=None,
) -> SolverReport:
    """Outer augmented-Lagrangian loop around warm-started inner HiLQR solves.

    ``activate_after`` maps constraint index -> outer iteration from which that
    constraint is enforced (constraints introduced mid-optimization).
    """
    u = np.asarray(u_init, dtype=float).reshape(-1, sys.control_dim)
    N = len(u)
    if al is None:
        al = ALState.initial(N, cset)
    records: list[OuterIterationRecord] = []
    total_iters = 0
    history: list[float] = []
    counts: list[int] = []
    modes: list = []
    diag: list[dict] = []
    status = Status.MAX_OUTER_ITERATIONS
    rep = None
    loose = replace(opts, cost_tolerance=max(opts.cost_tolerance, al.intermediate_cost_tolerance))
    if cset.size == 0:
        loose = opts  # nothing to enforce: a single full-tolerance solve
    tight = False
    for outer in range(al.max_outer_iterations):
        active = None
        if activate_after:
            active = np.array(
                [activate_after.get(int(owner), 0) <= outer for owner in cset.owner], dtype=bool
            )
        inner_opts = opts if tight or outer == al.max_outer_iterations - 1 else loose
        rep = inner_solve(sys, x0, mode0, u, cost, cset, al, inner_opts, dt=dt, active=active, diagnostics=diagnostics)
        total_iters += rep.iterations
        history.extend(rep.cost_history if not history else rep.cost_history[1:])
        counts.extend(rep.event_counts)
        modes.extend(rep.mode_sequences)
        diag.extend(rep.diagnostics)
        u = rep.trajectory.controls
        viol = max_violation(cset, rep.trajectory, active)
        records.append(
            OuterIterationRecord(
                outer,
                rep.iterations,
                viol,
                rep.final_cost,
                cost.total(rep.trajectory),
                al.mu,
                rep.status.value,
            )
        )
        if rep.status is Status.NUMERICAL_FAILURE:
            status = Status.NUMERICAL_FAILURE
            break
        all_active = active is None or bool(np.all(active))
        if viol <= al.constraint_tolerance:
            if rep.status is Status.CONVERGED and all_active and inner_opts is opts:
                status = Status.CONVERGED
                break
            # polish at the full tolerance with the same multipliers
            tight = True
            continue
        tight = False
        if al.mu * al.phi > al.mu_max:
            status = Status.PENALTY_OVERFLOW
            break
        update_multipliers(al, cset, rep.trajectory, active)
    assert rep is not None or al.max_outer_iterations == 0
    if rep is None:
        raise ValueError("max_outer_iterations must be at least 1")
    return SolverReport(
        status=status,
        iterations=total_iters,
        cost_history=history,
        trajectory=rep.trajectory,
        final_position_error=rep.final_position_error,
        event_counts=counts,
        mode_sequences=modes,
        diagnostics=diag,
        constraint_history=[r.max_violation for r in records],
        outer_records=records,
        message=rep.message,
    )
