"""Inequality constraints ``g(x, u) < 0`` with analytic derivatives.

Every supported kind reduces to rows of the form

    g = c + a_x . x + a_u . u - sum_i W_i (x_i - p_i)^2

so a whole set is evaluated with a handful of vectorized numpy operations.
Obstacles use the squared-distance form ``r^2 - |p - c|^2`` (negative outside).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

POSITION = (0, 1)


@dataclass(frozen=True)
class _Row:
    const: float
    ax: dict
    au: dict
    weight: dict
    center: dict


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple
    radius: float
    label: str | None = None
    indices: tuple = POSITION

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def rows(self):
        i, j = self.indices
        r2 = self.radius**2
        return [_Row(r2, {}, {}, {i: 1.0, j: 1.0}, {i: self.center[0], j: self.center[1]})]

    def to_dict(self):
        return {"kind": "circle", "center": list(self.center), "radius": self.radius, "label": self.label}


@dataclass(frozen=True)
class EllipseObstacle:
    """Axis-aligned ellipse; ``g = 1 - ((y-cy)/a)^2 - ((z-cz)/b)^2``."""

    center: tuple
    semi_axes: tuple
    label: str | None = None
    indices: tuple = POSITION

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")

    def rows(self):
        i, j = self.indices
        a, b = self.semi_axes
        return [
            _Row(1.0, {}, {}, {i: 1.0 / a**2, j: 1.0 / b**2}, {i: self.center[0], j: self.center[1]})
        ]

    def to_dict(self):
        return {
            "kind": "ellipse",
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
            "label": self.label,
        }


@dataclass(frozen=True)
class HalfPlane:
    """``g = normal . p - offset``; the allowed side is ``normal . p < offset``."""

    normal: tuple
    offset: float
    label: str | None = None
    indices: tuple = POSITION

    def rows(self):
        ax = {idx: float(n) for idx, n in zip(self.indices, self.normal)}
        return [_Row(-self.offset, ax, {}, {}, {})]

    def to_dict(self):
        return {"kind": "halfplane", "normal": list(self.normal), "offset": self.offset, "label": self.label}


@dataclass(frozen=True)
class InputBox:
    """Two rows: ``u_i - u_max`` and ``u_min - u_i``."""

    u_min: float
    u_max: float
    index: int
    label: str | None = None

    def __post_init__(self):
        if self.u_min > self.u_max:
            raise ValueError("u_min must not exceed u_max")

    def rows(self):
        return [
            _Row(-self.u_max, {}, {self.index: 1.0}, {}, {}),
            _Row(self.u_min, {}, {self.index: -1.0}, {}, {}),
        ]

    def to_dict(self):
        return {
            "kind": "inputbox",
            "u_min": self.u_min,
            "u_max": self.u_max,
            "index": self.index,
            "label": self.label,
        }


Constraint = CircleObstacle | EllipseObstacle | HalfPlane | InputBox


def constraint_from_dict(d: dict) -> Constraint:
    kind = d["kind"]
    label = d.get("label")
    if kind == "circle":
        return CircleObstacle(tuple(d["center"]), float(d["radius"]), label)
    if kind == "ellipse":
        return EllipseObstacle(tuple(d["center"]), tuple(d["semi_axes"]), label)
    if kind == "halfplane":
        return HalfPlane(tuple(d["normal"]), float(d["offset"]), label)
    if kind == "inputbox":
        return InputBox(float(d["u_min"]), float(d["u_max"]), int(d["index"]), label)
    raise ValueError(f"unknown constraint kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    constraints: tuple
    state_dim: int
    control_dim: int
    const: np.ndarray = field(init=False, repr=False)
    ax: np.ndarray = field(init=False, repr=False)
    au: np.ndarray = field(init=False, repr=False)
    weight: np.ndarray = field(init=False, repr=False)
    center: np.ndarray = field(init=False, repr=False)
    owner: np.ndarray = field(init=False, repr=False)

    def __init__(self, constraints: Sequence[Constraint] = (), state_dim: int = 4, control_dim: int = 2):
        object.__setattr__(self, "constraints", tuple(constraints))
        object.__setattr__(self, "state_dim", state_dim)
        object.__setattr__(self, "control_dim", control_dim)
        rows, owner = [], []
        for ci, c in enumerate(self.constraints):
            for r in c.rows():
                rows.append(r)
                owner.append(ci)
        m, n, nu = len(rows), state_dim, control_dim
        const = np.zeros(m)
        ax, au = np.zeros((m, n)), np.zeros((m, nu))
        weight, center = np.zeros((m, n)), np.zeros((m, n))
        for i, r in enumerate(rows):
            const[i] = r.const
            for k, v in r.ax.items():
                ax[i, k] = v
            for k, v in r.au.items():
                au[i, k] = v
            for k, v in r.weight.items():
                weight[i, k] = v
            for k, v in r.center.items():
                center[i, k] = v
        for name, arr in [
            ("const", const),
            ("ax", ax),
            ("au", au),
            ("weight", weight),
            ("center", center),
            ("owner", np.array(owner, dtype=int)),
        ]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.const)

    @property
    def size(self) -> int:
        return len(self.const)

    def state_only(self) -> "ConstraintSet":
        """Subset of constraints that do not depend on the control."""
        keep = [c for c in self.constraints if not isinstance(c, InputBox)]
        return ConstraintSet(keep, self.state_dim, self.control_dim)

    def input_boxes(self) -> list[InputBox]:
        return [c for c in self.constraints if isinstance(c, InputBox)]

    # -- evaluation -------------------------------------------------------

    def values(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x - self.center
        g = self.const + self.ax @ x - np.einsum("ij,ij->i", self.weight, d * d)
        if u is not None:
            g = g + self.au @ np.asarray(u, dtype=float)
        return g

    def evaluate(self, x, u=None):
        """Stacked ``(g, G_x, G_u)`` ordered like the constraint list."""
        x = np.asarray(x, dtype=float)
        g = self.values(x, u)
        Gx = self.ax - 2.0 * self.weight * (x - self.center)
        return g, Gx, self.au.copy()

    def hessian_x(self) -> np.ndarray:
        """Per-row state Hessians, ``(m, n, n)``; constant for all supported kinds."""
        m, n = self.weight.shape
        H = np.zeros((m, n, n))
        idx = np.arange(n)
        H[:, idx, idx] = -2.0 * self.weight
        return H

    def values_many(self, X, U=None) -> np.ndarray:
        """Values at many knots: ``X`` is ``(K, n)``; returns ``(K, m)``."""
        X = np.asarray(X, dtype=float)
        d = X[:, None, :] - self.center[None]
        G = self.const + X @ self.ax.T - np.einsum("kij,ij->ki", d * d, self.weight)
        if U is not None:
            G = G + np.asarray(U, dtype=float) @ self.au.T
        return G

    def jacobians_many(self, X):
        X = np.asarray(X, dtype=float)
        Gx = self.ax[None] - 2.0 * self.weight[None] * (X[:, None, :] - self.center[None])
        Gu = np.broadcast_to(self.au, (len(X),) + self.au.shape)
        return Gx, Gu

    def max_violation(self, x, u=None) -> float:
        """Largest ``g``; ``-inf`` for an empty set. ``<= 0`` is *not* strict feasibility."""
        if self.size == 0:
            return -np.inf
        return float(np.max(self.values(x, u)))

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.constraints]


def trajectory_feasible(cset: ConstraintSet, traj):
    """Strict feasibility ``g_j(x_k, u_k) < 0`` at every knot.

    Input rows are checked on ``k < N``; the terminal knot only sees state rows.
    Returns ``(feasible, (k, j, value))`` with the worst knot/row, or
    ``(True, None)`` when the set is empty.
    """
    if cset.size == 0:
        return True, None
    N = traj.horizon
    X = traj.states[:, : cset.state_dim]
    G = np.empty((N + 1, cset.size))
    G[:N] = cset.values_many(X[:N], traj.controls)
    G[N] = cset.values_many(X[N:])[0]
    state_rows = ~np.any(cset.au != 0.0, axis=1)
    G[N, ~state_rows] = -np.inf
    k, j = np.unravel_index(int(np.argmax(G)), G.shape)
    worst = (int(k), int(j), float(G[k, j]))
    return bool(worst[2] < 0.0), worst
