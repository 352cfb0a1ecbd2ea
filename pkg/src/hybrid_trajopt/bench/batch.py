"""Batch execution of benchmark scenarios and aggregate statistics."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..auglag import ALState, max_violation, solve_al
from ..dbas import BarrierConfig, solve_dbas
from ..ilqr import QuadraticCost, SolverOptions, Status
from .ball import bouncing_ball_system, initial_mode
from .scenarios import Scenario

log = logging.getLogger(__name__)

METHODS = ("dbas", "al")
VIOLATION_TOLERANCE = 1e-4


@dataclass
class MethodConfig:
    """Solver knobs shared by every scenario of a batch."""

    q_w: float = 1e-5
    q_wN: float | None = None
    mu0: float = 1.0
    phi: float = 10.0
    constraint_tolerance: float = VIOLATION_TOLERANCE
    max_outer_iterations: int = 20
    max_iterations: int = 150
    goal_tolerance: float = 5e-2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MethodConfig":
        return cls(**d)


def benchmark_cost(params) -> QuadraticCost:
    """Terminal position weight 4e3, control weight 5e-3, no running state cost."""
    return QuadraticCost(
        Q=np.zeros((4, 4)),
        R=5e-3 * np.eye(2),
        Q_terminal=np.diag([4e3, 4e3, 0.0, 0.0]),
        x_goal=params.x_goal,
    )


@dataclass
class RunResult:
    method: str
    seed: int
    index: int
    obstacle_count: int
    start_class: str
    status: str
    success: bool
    iterations: int
    final_cost: float
    position_error: float
    max_violation: float
    # largest constraint value over accepted DBaS iterates (negative = strictly feasible)
    iterate_worst: float
    wall_time: float
    trajectory: object = field(default=None, repr=False)
    barrier_states: object = field(default=None, repr=False)

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("trajectory", "barrier_states")}
        return d


def run_scenario(scn: Scenario, method: str, cfg: MethodConfig = MethodConfig(), *, keep_trajectory=False, diagnostics=None) -> RunResult:
    """Solve one scenario; solver failures are recorded, never raised."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    p = scn.params
    sys = bouncing_ball_system(p)
    x0 = np.asarray(p.x0, dtype=float)
    cost = benchmark_cost(p)
    opts = SolverOptions(max_iterations=cfg.max_iterations, goal_tolerance=cfg.goal_tolerance)
    t0 = time.perf_counter()
    try:
        if method == "dbas":
            rep = solve_dbas(
                sys, x0, initial_mode(x0), scn.initial_controls, cost, scn.obstacles,
                BarrierConfig(cfg.q_w, cfg.q_wN), opts, dt=p.dt, attempt_infeasible=True,
                diagnostics=diagnostics,
            )
        else:
            al = ALState.initial(
                p.N, scn.obstacles, mu0=cfg.mu0, phi=cfg.phi,
                constraint_tolerance=cfg.constraint_tolerance,
                max_outer_iterations=cfg.max_outer_iterations,
            )
            rep = solve_al(
                sys, x0, initial_mode(x0), scn.initial_controls, cost, scn.obstacles, al, opts,
                dt=p.dt, activate_after=scn.activate_after, diagnostics=diagnostics,
            )
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
        log.warning("scenario %d (%s) failed: %s", scn.index, method, err)
        return RunResult(
            method, scn.seed, scn.index, scn.obstacle_count, scn.start_class.value,
            Status.NUMERICAL_FAILURE.value, False, 0, float("inf"), float("inf"), float("inf"),
            float("nan"), time.perf_counter() - t0,
        )
    wall = time.perf_counter() - t0
    viol = max_violation(scn.obstacles, rep.trajectory)
    worst = float("nan")
    if method == "dbas" and rep.constraint_history:
        worst = float(max(rep.constraint_history))
    success = bool(
        rep.status is Status.CONVERGED
        and viol <= cfg.constraint_tolerance
        and rep.final_position_error <= cfg.goal_tolerance
    )
    return RunResult(
        method, scn.seed, scn.index, scn.obstacle_count, scn.start_class.value,
        rep.status.value, success, rep.iterations, float(rep.final_cost),
        float(rep.final_position_error), float(viol), worst, wall,
        rep.trajectory if keep_trajectory else None,
        rep.barrier_states if keep_trajectory else None,
    )


def _run_job(job):
    scn, method, cfg, keep = job
    return run_scenario(scn, method, cfg, keep_trajectory=keep)


def run_batch(
    scenarios: list[Scenario],
    method: str,
    cfg: MethodConfig = MethodConfig(),
    *,
    jobs: int = 1,
    keep_trajectories: bool = False,
) -> list[RunResult]:
    """Solve every scenario; results come back in scenario order regardless of ``jobs``."""
    work = [(s, method, cfg, keep_trajectories) for s in scenarios]
    if jobs <= 1 or len(work) <= 1:
        return [_run_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_job, work))


@dataclass
class BatchStatistics:
    """One row per (method, obstacle_count, start_class)."""

    rows: list[dict]

    @classmethod
    def from_results(cls, results: list[RunResult | dict]) -> "BatchStatistics":
        groups: dict[tuple, list[dict]] = {}
        for r in results:
            d = r.summary() if isinstance(r, RunResult) else r
            groups.setdefault((d["method"], int(d["obstacle_count"]), d["start_class"]), []).append(d)
        rows = []
        for (method, count, start), runs in sorted(groups.items()):
            runs = sorted(runs, key=lambda d: (d["seed"], d["index"]))
            n = len(runs)
            succ = sum(bool(d["success"]) for d in runs)
            conv = [d for d in runs if d["status"] == Status.CONVERGED.value]
            its = np.array([d["iterations"] for d in conv], dtype=float)
            costs = np.array([d["final_cost"] for d in runs if np.isfinite(d["final_cost"])])
            statuses = [d["status"] for d in runs]
            q = lambda a, p: float(np.percentile(a, p)) if a.size else float("nan")
            rows.append(
                {
                    "method": method,
                    "obstacle_count": count,
                    "start_class": start,
                    "scenarios": n,
                    "successes": succ,
                    "success_rate": 100.0 * succ / n,
                    "converged": len(conv),
                    "iter_q1": q(its, 25),
                    "iter_median": q(its, 50),
                    "iter_q3": q(its, 75),
                    "cost_q1": q(costs, 25),
                    "cost_median": q(costs, 50),
                    "cost_q3": q(costs, 75),
                    # failure taxonomy
                    "converged_unsuccessful": len(conv) - succ,
                    "non_convergence": sum(
                        s in (Status.MAX_ITERATIONS.value, Status.MAX_OUTER_ITERATIONS.value, Status.PENALTY_OVERFLOW.value)
                        for s in statuses
                    ),
                    "numerical_failure": sum(s == Status.NUMERICAL_FAILURE.value for s in statuses),
                    "infeasible_start": sum(s == Status.INFEASIBLE_START.value for s in statuses),
                }
            )
        return cls(rows)

    def row(self, method: str, obstacle_count: int, start_class: str) -> dict | None:
        for r in self.rows:
            if (r["method"], r["obstacle_count"], r["start_class"]) == (method, obstacle_count, start_class):
                return r
        return None

    def success_rate(self, method: str, start_class: str) -> float:
        """Pooled success rate (%) over all obstacle counts."""
        rs = [r for r in self.rows if r["method"] == method and r["start_class"] == start_class]
        n = sum(r["scenarios"] for r in rs)
        return 100.0 * sum(r["successes"] for r in rs) / n if n else float("nan")
