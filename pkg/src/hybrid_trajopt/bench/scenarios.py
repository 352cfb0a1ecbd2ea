"""Randomized obstacle scenarios for the bouncing-ball benchmark."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..constraints import CircleObstacle, ConstraintSet, EllipseObstacle, constraint_from_dict, trajectory_feasible
from ..errors import SamplingExhausted
from ..hybrid import rollout
from .ball import BouncingBallParams, bouncing_ball_system, initial_mode

WORKSPACE_Y = (0.0, 10.0)
WORKSPACE_Z = (0.0, 6.0)
RADIUS_RANGE = (0.3, 1.2)
CONTROL_AMPLITUDE = 10.0
# obstacles keep this clearance (beyond their own extent) from x0 and the goal
ENDPOINT_MARGIN = 0.25


class StartClass(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


@dataclass
class Scenario:
    seed: int
    obstacles: ConstraintSet
    initial_controls: np.ndarray
    start_class: StartClass
    obstacle_count: int
    params: BouncingBallParams = field(default_factory=BouncingBallParams)
    index: int = 0
    # AL only: constraint index -> outer iteration from which it is enforced
    activate_after: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "index": self.index,
            "start_class": self.start_class.value,
            "obstacle_count": self.obstacle_count,
            "params": self.params.to_dict(),
            "obstacles": self.obstacles.to_list(),
            "initial_controls": self.initial_controls.tolist(),
        }
        if self.activate_after:
            d["activate_after"] = {str(k): v for k, v in self.activate_after.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        """Inverse of ``to_dict``; missing controls are regenerated from ``seed``."""
        params = BouncingBallParams.from_dict(d.get("params", {}))
        obstacles = ConstraintSet([constraint_from_dict(o) for o in d.get("obstacles", [])])
        seed = int(d.get("seed", 0))
        if d.get("initial_controls") is not None:
            U = np.asarray(d["initial_controls"], dtype=float).reshape(params.N, 2)
        else:
            U = random_controls(np.random.default_rng(seed), params.N)
        start = d.get("start_class")
        if start is None:
            start = classify(obstacles, U, params).value
        return cls(
            seed=seed,
            obstacles=obstacles,
            initial_controls=U,
            start_class=StartClass(start),
            obstacle_count=int(d.get("obstacle_count", len(obstacles.constraints))),
            params=params,
            index=int(d.get("index", 0)),
            activate_after={int(k): int(v) for k, v in d["activate_after"].items()} if d.get("activate_after") else None,
        )


def random_controls(rng: np.random.Generator, N: int, amplitude: float = CONTROL_AMPLITUDE) -> np.ndarray:
    return rng.uniform(-amplitude, amplitude, size=(N, 2))


def _clear_of(center, extent, point) -> bool:
    return float(np.hypot(center[0] - point[0], center[1] - point[1])) > extent + ENDPOINT_MARGIN


def random_obstacle(rng: np.random.Generator, p: BouncingBallParams, label: str):
    """One circle or axis-aligned ellipse that leaves x0 and the goal clear."""
    endpoints = (p.x0[:2], p.goal)
    while True:
        c = (float(rng.uniform(*WORKSPACE_Y)), float(rng.uniform(*WORKSPACE_Z)))
        if rng.random() < 0.5:
            r = float(rng.uniform(*RADIUS_RANGE))
            ob, extent = CircleObstacle(c, r, label), r
        else:
            a, b = (float(v) for v in rng.uniform(*RADIUS_RANGE, size=2))
            ob, extent = EllipseObstacle(c, (a, b), label), max(a, b)
        if all(_clear_of(c, extent, q) for q in endpoints):
            return ob


def classify(obstacles: ConstraintSet, U, p: BouncingBallParams) -> StartClass:
    sys = bouncing_ball_system(p)
    x0 = np.asarray(p.x0, dtype=float)
    traj = rollout(sys, x0, initial_mode(x0), U, p.dt)
    ok, _ = trajectory_feasible(obstacles, traj)
    return StartClass.FEASIBLE if ok else StartClass.INFEASIBLE


def generate_scenarios(
    seed: int,
    obstacle_count: int,
    count: int,
    start_class: StartClass | str,
    params: BouncingBallParams = BouncingBallParams(),
    *,
    amplitude: float = CONTROL_AMPLITUDE,
    controls_per_layout: int = 20,
    max_attempts: int = 2000,
) -> list[Scenario]:
    """Rejection-sample ``count`` scenarios whose initial rollout matches ``start_class``.

    Each scenario gets its own child seed, so scenario ``i`` does not depend
    on how many draws earlier scenarios needed.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if not 1 <= obstacle_count <= 10:
        raise ValueError("obstacle_count must lie in 1..10")
    start_class = StartClass(start_class)
    sys = bouncing_ball_system(params)
    x0 = np.asarray(params.x0, dtype=float)
    mode0 = initial_mode(x0)
    children = np.random.SeedSequence([seed, obstacle_count, 0 if start_class is StartClass.FEASIBLE else 1])
    out = []
    for i, child in enumerate(children.spawn(count)):
        rng = np.random.default_rng(child)
        for attempt in range(max_attempts):
            obs = ConstraintSet(
                [random_obstacle(rng, params, f"obs{j}") for j in range(obstacle_count)]
            )
            found = None
            for _ in range(controls_per_layout):
                U = random_controls(rng, params.N, amplitude)
                traj = rollout(sys, x0, mode0, U, params.dt)
                ok, _ = trajectory_feasible(obs, traj)
                if ok == (start_class is StartClass.FEASIBLE):
                    found = U
                    break
            if found is not None:
                out.append(Scenario(seed, obs, found, start_class, obstacle_count, params, i))
                break
        else:
            raise SamplingExhausted(
                f"no {start_class.value} scenario with {obstacle_count} obstacles after {max_attempts} layouts"
            )
    return out
