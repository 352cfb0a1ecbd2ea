"""Planar bouncing ball: state ``[y, z, vy, vz]``, control ``[Fy, Fz]``."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..hybrid import HybridSystem, Mode, Transition

FALLING = 1
RISING = 2


@dataclass(frozen=True)
class BouncingBallParams:
    m: float = 1.0
    g: float = 9.81
    e: float = 0.75
    x0: tuple = (0.0, 4.0, 0.0, 0.0)
    goal: tuple = (10.0, 1.0)
    N: int = 200
    dt: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.e <= 1.0:
            raise ValueError("restitution must lie in (0, 1]")
        if self.m <= 0.0 or self.dt <= 0.0:
            raise ValueError("mass and dt must be positive")

    @property
    def x_goal(self) -> np.ndarray:
        return np.array([self.goal[0], self.goal[1], 0.0, 0.0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        d["goal"] = list(self.goal)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BouncingBallParams":
        d = dict(d)
        if "x0" in d:
            d["x0"] = tuple(float(v) for v in d["x0"])
        if "goal" in d:
            d["goal"] = tuple(float(v) for v in d["goal"])
        return cls(**d)


def initial_mode(x) -> int:
    # at rest (vz == 0) the impact guard must be armed
    return RISING if x[3] > 0.0 else FALLING


def bouncing_ball_system(p: BouncingBallParams = BouncingBallParams(), **options) -> HybridSystem:
    """Two-mode ballistic ball; impact fires on ``z <= 0`` while falling.

    Mode 1 (falling) arms the impact guard ``z``; mode 2 (rising) arms the apex
    guard ``vz``. The impact reset scales ``vz`` by ``-e``; the apex reset is the
    identity.
    """
    m, grav, e = p.m, p.g, p.e

    def field(t, x, u):
        return np.array([x[2], x[3], u[0] / m, u[1] / m - grav])

    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = 1.0 / m

    def jac(t, x, u):
        return A, B

    impact_reset = np.diag([1.0, 1.0, 1.0, -e])
    zero4 = np.zeros(4)
    dz = np.array([0.0, 1.0, 0.0, 0.0])
    dvz = np.array([0.0, 0.0, 0.0, 1.0])

    impact = Transition(
        FALLING,
        RISING,
        guard=lambda t, x, u: x[1],
        reset=lambda t, x, u: impact_reset @ x,
        guard_gradient=lambda t, x, u: (dz, 0.0),
        reset_jacobian=lambda t, x, u: (impact_reset, zero4),
    )
    apex = Transition(
        RISING,
        FALLING,
        guard=lambda t, x, u: x[3],
        reset=lambda t, x, u: x.copy(),
        guard_gradient=lambda t, x, u: (dvz, 0.0),
        reset_jacobian=lambda t, x, u: (np.eye(4), zero4),
    )
    def flow(t, x, u, h):
        # constant acceleration: identical to an RK4 step up to rounding
        ay = u[0] / m
        az = u[1] / m - grav
        return np.array(
            [
                x[0] + h * x[2] + 0.5 * h * h * ay,
                x[1] + h * x[3] + 0.5 * h * h * az,
                x[2] + h * ay,
                x[3] + h * az,
            ]
        )

    exact = options.get("integrator", "rk4") == "rk4"
    mode = Mode(field, jac, flow if exact else None)
    return HybridSystem(
        modes={FALLING: mode, RISING: mode},
        transitions=[impact, apex],
        state_dim=4,
        control_dim=2,
        **options,
    )
