"""Hybrid dynamical systems: definition, time-stepping simulation, saltation matrices.

A system is a set of modes, each with a vector field ``f(t, x, u)``, plus directed
transitions carrying a guard ``g(t, x, u)`` (fires when ``g <= 0``) and a reset
``R(t, x, u)``. Simulation is fixed-step: each step integrates the active field,
localizes guard crossings by bisection, applies resets and keeps integrating the
remainder of the step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .errors import (
    GuardLocalizationFailure,
    HybridError,
    MissingTransition,
    TransversalityViolation,
    ZenoLimitExceeded,
)

FD_STEP = 1e-6

FieldFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Mode:
    """Continuous dynamics of one mode.

    ``jacobian(t, x, u)`` returns ``(F_x, F_u)``; when omitted, central finite
    differences are used. ``flow(t, x, u, h)`` optionally replaces the system
    integrator for time stepping inside this mode; any component it does not
    reproduce must be restored by the system's ``knot_map``. Saltation matrices
    and Jacobians always use ``field``. Fields must return numpy arrays.
    """

    field: FieldFn
    jacobian: Callable[[float, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    flow: Callable[[float, np.ndarray, np.ndarray, float], np.ndarray] | None = None


@dataclass(frozen=True)
class Transition:
    """Directed edge ``source -> target`` with its guard and reset.

    ``guard_gradient`` returns ``(D_x g, D_t g)``; ``reset_jacobian`` returns
    ``(D_x R, D_t R)``. Both fall back to central finite differences.
    """

    source: Hashable
    target: Hashable
    guard: Callable[[float, np.ndarray, np.ndarray], float]
    reset: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    guard_gradient: Callable[[float, np.ndarray, np.ndarray], tuple[np.ndarray, float]] | None = None
    reset_jacobian: Callable[[float, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None


@dataclass(frozen=True, eq=False)
class HybridSystem:
    """Immutable hybrid system ``(modes, transitions, fields, guards, resets)``.

    ``knot_map``, if given, is applied to the state at the end of every discrete
    step (used to re-synchronise output-like states such as a barrier state).
    """

    modes: Mapping[Hashable, Mode]
    transitions: Sequence[Transition]
    state_dim: int
    control_dim: int
    integrator: str = "rk4"
    max_events_per_step: int = 10
    guard_tolerance: float = 1e-9
    max_bisections: int = 60
    grazing_tolerance: float = 1e-8
    guard_samples: int = 1
    knot_map: Callable[[np.ndarray], np.ndarray] | None = None
    _outgoing: Mapping[Hashable, tuple[Transition, ...]] = field(init=False, repr=False)
    _edges: Mapping[tuple, Transition] = field(init=False, repr=False)

    def __post_init__(self):
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        modes = MappingProxyType(dict(self.modes))
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "transitions", tuple(self.transitions))
        edges: dict[tuple, Transition] = {}
        outgoing: dict[Hashable, list[Transition]] = {m: [] for m in modes}
        for tr in self.transitions:
            if tr.source not in modes or tr.target not in modes:
                raise ValueError(f"transition {tr.source}->{tr.target} references an unknown mode")
            key = (tr.source, tr.target)
            if key in edges:
                raise ValueError(f"duplicate transition {key}")
            edges[key] = tr
            outgoing[tr.source].append(tr)
        object.__setattr__(self, "_edges", MappingProxyType(edges))
        object.__setattr__(
            self, "_outgoing", MappingProxyType({m: tuple(v) for m, v in outgoing.items()})
        )
        x, u = np.zeros(self.state_dim), np.zeros(self.control_dim)
        for name, mode in modes.items():
            out = np.asarray(mode.field(0.0, x, u))
            if out.shape != (self.state_dim,):
                raise ValueError(
                    f"mode {name!r} field returns shape {out.shape}, expected ({self.state_dim},)"
                )

    def transition(self, source, target) -> Transition:
        try:
            return self._edges[(source, target)]
        except KeyError:
            raise MissingTransition(f"no transition {source!r} -> {target!r}") from None

    def outgoing(self, mode) -> tuple[Transition, ...]:
        try:
            return self._outgoing[mode]
        except KeyError:
            raise HybridError(f"unknown mode {mode!r}") from None

    def field_jacobian(self, mode, t, x, u) -> tuple[np.ndarray, np.ndarray]:
        m = self.modes[mode]
        if m.jacobian is not None:
            return m.jacobian(t, x, u)
        return _fd_jacobian(m.field, t, x, u)


@dataclass(frozen=True)
class TransitionEvent:
    step_index: int
    event_time: float
    from_mode: Hashable
    to_mode: Hashable
    state_pre: np.ndarray
    state_post: np.ndarray
    saltation: np.ndarray


@dataclass
class HybridTrajectory:
    states: np.ndarray  # (N+1, n)
    controls: np.ndarray  # (N, m)
    modes: list
    events: list[TransitionEvent]
    dt: float
    t0: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.controls)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.horizon + 1)

    def events_at(self, k: int) -> list[TransitionEvent]:
        return [ev for ev in self.events if ev.step_index == k]

    def event_counts(self) -> np.ndarray:
        counts = np.zeros(self.horizon, dtype=int)
        for ev in self.events:
            counts[ev.step_index] += 1
        return counts


# ---------------------------------------------------------------------------
# finite differences


def _fd_jacobian(fn: FieldFn, t, x, u, eps=FD_STEP):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = x.size, u.size
    f0 = np.asarray(fn(t, x, u), dtype=float)
    Fx = np.empty((f0.size, n))
    Fu = np.empty((f0.size, m))
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = eps
        Fx[:, i] = (np.asarray(fn(t, x + dx, u)) - np.asarray(fn(t, x - dx, u))) / (2 * eps)
    for i in range(m):
        du = np.zeros(m)
        du[i] = eps
        Fu[:, i] = (np.asarray(fn(t, x, u + du)) - np.asarray(fn(t, x, u - du))) / (2 * eps)
    return Fx, Fu


def _guard_gradient(tr: Transition, t, x, u):
    if tr.guard_gradient is not None:
        gx, gt = tr.guard_gradient(t, x, u)
        return np.asarray(gx, dtype=float), float(gt)
    gx, _ = _fd_jacobian(lambda t_, x_, u_: np.atleast_1d(tr.guard(t_, x_, u_)), t, x, u)
    gt = (float(tr.guard(t + FD_STEP, x, u)) - float(tr.guard(t - FD_STEP, x, u))) / (2 * FD_STEP)
    return gx[0], gt


def _reset_jacobian(tr: Transition, t, x, u):
    if tr.reset_jacobian is not None:
        Rx, Rt = tr.reset_jacobian(t, x, u)
        return np.asarray(Rx, dtype=float), np.asarray(Rt, dtype=float)
    Rx, _ = _fd_jacobian(tr.reset, t, x, u)
    Rt = (np.asarray(tr.reset(t + FD_STEP, x, u)) - np.asarray(tr.reset(t - FD_STEP, x, u))) / (
        2 * FD_STEP
    )
    return Rx, Rt


# ---------------------------------------------------------------------------
# integration


def _integrate(sys: HybridSystem, mode, t, x, u, h) -> np.ndarray:
    md = sys.modes[mode]
    if md.flow is not None:
        return md.flow(t, x, u, h)
    f = md.field
    if sys.integrator == "euler":
        return x + h * f(t, x, u)
    hh = 0.5 * h
    k1 = f(t, x, u)
    k2 = f(t + hh, x + hh * k1, u)
    k3 = f(t + hh, x + hh * k2, u)
    k4 = f(t + h, x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def segment_jacobian(sys: HybridSystem, mode, t, x, u, h) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of one integrator step of length ``h`` inside a single mode."""
    n = sys.state_dim
    f = sys.modes[mode].field
    eye = np.eye(n)
    A1, B1 = sys.field_jacobian(mode, t, x, u)
    if sys.integrator == "euler":
        return eye + h * A1, h * B1
    k1 = np.asarray(f(t, x, u))
    x2 = x + 0.5 * h * k1
    A2, B2 = sys.field_jacobian(mode, t + 0.5 * h, x2, u)
    k2 = np.asarray(f(t + 0.5 * h, x2, u))
    x3 = x + 0.5 * h * k2
    A3, B3 = sys.field_jacobian(mode, t + 0.5 * h, x3, u)
    k3 = np.asarray(f(t + 0.5 * h, x3, u))
    x4 = x + h * k3
    A4, B4 = sys.field_jacobian(mode, t + h, x4, u)
    # stage sensitivities d k_i / d(x, u)
    K1x, K1u = A1, B1
    K2x = A2 @ (eye + 0.5 * h * K1x)
    K2u = A2 @ (0.5 * h * K1u) + B2
    K3x = A3 @ (eye + 0.5 * h * K2x)
    K3u = A3 @ (0.5 * h * K2u) + B3
    K4x = A4 @ (eye + h * K3x)
    K4u = A4 @ (h * K3u) + B4
    A = eye + (h / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    B = (h / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)
    return A, B


# ---------------------------------------------------------------------------
# saltation


def saltation_matrix(sys: HybridSystem, from_mode, to_mode, t, x_pre, u) -> np.ndarray:
    """First-order map of perturbations across the transition ``from_mode -> to_mode``.

    ``F_J`` is evaluated at the post-reset state with the same (zero-order-hold)
    control as before the event.
    """
    tr = sys.transition(from_mode, to_mode)
    x_pre = np.asarray(x_pre, dtype=float)
    u = np.asarray(u, dtype=float)
    F_I = np.asarray(sys.modes[from_mode].field(t, x_pre, u), dtype=float)
    x_post = np.asarray(tr.reset(t, x_pre, u), dtype=float)
    F_J = np.asarray(sys.modes[to_mode].field(t, x_post, u), dtype=float)
    R_x, R_t = _reset_jacobian(tr, t, x_pre, u)
    g_x, g_t = _guard_gradient(tr, t, x_pre, u)
    denom = g_t + g_x @ F_I
    if abs(denom) < sys.grazing_tolerance:
        raise TransversalityViolation(
            f"grazing transition {from_mode!r}->{to_mode!r}: |D_t g + D_x g F| = {abs(denom):.3e}"
        )
    return R_x + np.outer(F_J - R_x @ F_I - R_t, g_x) / denom


# ---------------------------------------------------------------------------
# stepping


def _guard_rate(sys: HybridSystem, tr: Transition, mode, t, x, u) -> float:
    g_x, g_t = _guard_gradient(tr, t, x, u)
    return g_t + g_x @ np.asarray(sys.modes[mode].field(t, x, u))


def _find_event(sys: HybridSystem, mode, t, x, u, h, x_end):
    """Earliest guard crossing within ``[t, t + h]``.

    Returns ``(transition, s, x_pre)`` with ``s`` the offset from ``t``, or None.
    A guard already non-positive at the segment start fires immediately only when
    the flow is strictly entering it.
    """
    best = None
    for tr in sys.outgoing(mode):
        g0 = float(tr.guard(t, x, u))
        if g0 <= 0.0:
            if _guard_rate(sys, tr, mode, t, x, u) < -sys.grazing_tolerance:
                return tr, 0.0, x.copy()
            continue
        # sample the guard along the segment; bracket the first sign change
        lo, x_hi, hi = 0.0, None, None
        for i in range(1, sys.guard_samples + 1):
            s = h * i / sys.guard_samples
            xs = x_end if i == sys.guard_samples else _integrate(sys, mode, t, x, u, s)
            if float(tr.guard(t + s, xs, u)) <= 0.0:
                hi, x_hi = s, xs
                break
            lo = s
        if hi is None:
            continue
        if best is not None and lo >= best[1]:
            continue
        s_ev, x_ev = _bisect(sys, tr, mode, t, x, u, lo, hi, x_hi)
        if best is None or s_ev < best[1]:
            best = (tr, s_ev, x_ev)
    return best


def _bisect(sys, tr, mode, t, x, u, lo, hi, x_hi):
    g_hi = float(tr.guard(t + hi, x_hi, u))
    for _ in range(sys.max_bisections):
        if abs(g_hi) <= sys.guard_tolerance:
            return hi, x_hi
        mid = 0.5 * (lo + hi)
        x_mid = _integrate(sys, mode, t, x, u, mid)
        g_mid = float(tr.guard(t + mid, x_mid, u))
        if g_mid <= 0.0:
            hi, x_hi, g_hi = mid, x_mid, g_mid
        else:
            lo = mid
    if abs(g_hi) <= sys.guard_tolerance:
        return hi, x_hi
    raise GuardLocalizationFailure(
        f"guard {tr.source!r}->{tr.target!r} not localized: |g| = {abs(g_hi):.3e}"
    )


def step(sys: HybridSystem, mode, t, x, u, dt, step_index: int = 0):
    """Advance one discrete step. Returns ``(x_next, mode_next, events)``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    t_end = t + dt
    events: list[TransitionEvent] = []
    while True:
        h = t_end - t
        if h <= 0.0:
            break
        x_end = _integrate(sys, mode, t, x, u, h)
        hit = _find_event(sys, mode, t, x, u, h, x_end)
        if hit is None:
            x, t = x_end, t_end
            break
        if len(events) >= sys.max_events_per_step:
            raise ZenoLimitExceeded(
                f"more than {sys.max_events_per_step} events within one step of {dt} s"
            )
        tr, s, x_pre = hit
        t_ev = t + s
        x_post = np.asarray(tr.reset(t_ev, x_pre, u), dtype=float)
        xi = saltation_matrix(sys, tr.source, tr.target, t_ev, x_pre, u)
        events.append(TransitionEvent(step_index, t_ev, tr.source, tr.target, x_pre, x_post, xi))
        mode, x, t = tr.target, x_post, t_ev
    if sys.knot_map is not None:
        x = np.asarray(sys.knot_map(x), dtype=float)
    return x, mode, events


def rollout(sys: HybridSystem, x0, mode0, controls, dt, t0: float = 0.0) -> HybridTrajectory:
    controls = np.asarray(controls, dtype=float).reshape(-1, sys.control_dim)
    N = len(controls)
    x = np.asarray(x0, dtype=float)
    if sys.knot_map is not None:
        x = np.asarray(sys.knot_map(x), dtype=float)
    states = np.empty((N + 1, sys.state_dim))
    states[0] = x
    modes = [mode0]
    events: list[TransitionEvent] = []
    mode = mode0
    for k in range(N):
        try:
            x, mode, evs = step(sys, mode, t0 + k * dt, x, controls[k], dt, step_index=k)
        except HybridError as err:
            err.step_index = k
            raise
        states[k + 1] = x
        modes.append(mode)
        events.extend(evs)
    return HybridTrajectory(states, controls.copy(), modes, events, dt, t0)


# ---------------------------------------------------------------------------
# linearization


def _compose_step(sys, mode, t, x, u, dt, events):
    """Discrete-step Jacobians through the recorded events of that step."""
    A = np.eye(sys.state_dim)
    B = np.zeros((sys.state_dim, sys.control_dim))
    xi_total = np.eye(sys.state_dim)
    t_seg, x_seg, m_seg = t, x, mode
    for ev in events:
        As, Bs = segment_jacobian(sys, m_seg, t_seg, x_seg, u, ev.event_time - t_seg)
        A = ev.saltation @ (As @ A)
        B = ev.saltation @ (As @ B + Bs)
        xi_total = ev.saltation @ xi_total
        t_seg, x_seg, m_seg = ev.event_time, ev.state_post, ev.to_mode
    As, Bs = segment_jacobian(sys, m_seg, t_seg, x_seg, u, t + dt - t_seg)
    return As @ A, As @ B + Bs, xi_total


def linearize_step(sys: HybridSystem, mode, t, x, u, dt) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians ``(A, B)`` of the discrete flow ``x_{k+1} = f(x_k, u_k, dt)``.

    Steps containing hybrid events return the saltation-composed Jacobians.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _, _, events = step(sys, mode, t, x, u, dt)
    A, B, _ = _compose_step(sys, mode, t, x, u, dt, events)
    return A, B


@dataclass
class Linearization:
    A: np.ndarray  # (N, n, n)
    B: np.ndarray  # (N, n, m)
    saltation: np.ndarray  # (N, n, n), identity on event-free steps


def linearize_trajectory(sys: HybridSystem, traj: HybridTrajectory) -> Linearization:
    N, n, m = traj.horizon, sys.state_dim, sys.control_dim
    A = np.empty((N, n, n))
    B = np.empty((N, n, m))
    XI = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    by_step: dict[int, list[TransitionEvent]] = {}
    for ev in traj.events:
        by_step.setdefault(ev.step_index, []).append(ev)
    for k in range(N):
        t = traj.t0 + k * traj.dt
        evs = by_step.get(k)
        if evs:
            A[k], B[k], XI[k] = _compose_step(
                sys, traj.modes[k], t, traj.states[k], traj.controls[k], traj.dt, evs
            )
        else:
            A[k], B[k] = segment_jacobian(
                sys, traj.modes[k], t, traj.states[k], traj.controls[k], traj.dt
            )
    return Linearization(A, B, XI)
