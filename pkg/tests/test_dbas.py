import dataclasses

import numpy as np
import pytest

from hybrid_trajopt.bench.ball import FALLING, RISING, bouncing_ball_system
from hybrid_trajopt.constraints import CircleObstacle, ConstraintSet, InputBox, trajectory_feasible
from hybrid_trajopt.dbas import (
    BarrierConfig,
    BarrierCost,
    augment_system,
    barrier_dynamics,
    barrier_state,
    solve_dbas,
)
from hybrid_trajopt.errors import InfeasibleGoal
from hybrid_trajopt.hybrid import linearize_step, rollout, saltation_matrix, step
from hybrid_trajopt.ilqr import SolverOptions, Status, solve

CIRCLE = ConstraintSet([CircleObstacle((5.0, 2.0), 1.0)])
GOAL = np.array([6.0, 4.0, 0.0, 0.0])


def test_barrier_state_at_goal_is_zero():
    assert barrier_state(CIRCLE, GOAL, GOAL) == 0.0


def test_barrier_state_by_hand():
    assert barrier_state(CIRCLE, np.array([6.0, 3.0, 0.0, 0.0]), GOAL) == pytest.approx(0.75)


def test_barrier_state_violation_is_inf():
    # g = 1 - 0.9 = +0.1
    x = np.array([5.0, 2.0 + np.sqrt(0.9), 0.0, 0.0])
    assert barrier_state(CIRCLE, x, GOAL) == np.inf


def test_goal_inside_obstacle():
    with pytest.raises(InfeasibleGoal):
        barrier_state(CIRCLE, GOAL, np.array([5.0, 2.0, 0.0, 0.0]))
    with pytest.raises(InfeasibleGoal):
        augment_system(bouncing_ball_system(), CIRCLE, x_goal=np.array([5.0, 2.5, 0.0, 0.0]))


def test_barrier_rate_examples():
    x = np.array([5.0, 4.0, 0.0, 0.0])
    assert barrier_dynamics(CIRCLE, x, np.zeros(4)) == 0.0
    # moving along y at the top of the circle is tangent to the level set
    assert barrier_dynamics(CIRCLE, x, np.array([1.0, 0.0, 0.0, 0.0])) == 0.0


def test_radial_approach_rate_grows():
    rates = []
    for z in (4.0, 3.5, 3.1, 3.01, 3.001):
        x = np.array([5.0, z, 0.0, 0.0])
        rates.append(barrier_dynamics(CIRCLE, x, np.array([0.0, -1.0, 0.0, 0.0])))
    assert all(r > 0 for r in rates)
    assert np.all(np.diff(rates) > 0)
    assert rates[-1] > 1e5


def test_empty_set_augmentation_is_block_diagonal():
    ball = bouncing_ball_system()
    aug = augment_system(ball, ConstraintSet([]), x_goal=GOAL)
    xa = np.array([1.0, 0.0, 0.4, -2.0, 0.0])
    u = np.array([0.0, 3.0])
    assert aug.modes[FALLING].field(0.0, xa, u)[4] == 0.0
    xi = saltation_matrix(ball, FALLING, RISING, 0.0, xa[:4], u)
    xa_i = saltation_matrix(aug, FALLING, RISING, 0.0, xa, u)
    expected = np.eye(5)
    expected[:4, :4] = xi
    np.testing.assert_allclose(xa_i, expected, atol=1e-14)


def test_augmented_saltation_physical_block():
    ball = bouncing_ball_system()
    aug = augment_system(ball, CIRCLE, x_goal=np.array([10.0, 1.0, 0, 0]))
    x = np.array([1.0, 0.0, 0.4, -2.0])
    u = np.array([0.5, 3.0])
    xa = np.append(x, barrier_state(CIRCLE, x, np.array([10.0, 1.0, 0, 0])))
    np.testing.assert_allclose(
        saltation_matrix(aug, FALLING, RISING, 0.0, xa, u)[:4, :4],
        saltation_matrix(ball, FALLING, RISING, 0.0, x, u),
        atol=1e-10,
    )


def test_augmented_impact_step_matches_finite_differences():
    """Barrier row through an impact, against the integrated augmented flow."""
    goal = np.array([10.0, 1.0, 0, 0])
    ball = dataclasses.replace(bouncing_ball_system(), guard_tolerance=1e-14)
    cset = ConstraintSet([CircleObstacle((1.5, 0.8), 0.5)])
    aug = augment_system(ball, cset, x_goal=goal, resync=False)
    x = np.array([1.0, 1e-3, 0.4, -1.0])
    xa = np.append(x, barrier_state(cset, x, goal))
    u = np.array([0.5, 1.0])
    dt = 0.004
    _, _, evs = step(aug, FALLING, 0.0, xa, u, dt)
    assert len(evs) == 1
    A, B = linearize_step(aug, FALLING, 0.0, xa, u, dt)
    eps = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = eps
        fd = (step(aug, FALLING, 0.0, xa + e, u, dt)[0] - step(aug, FALLING, 0.0, xa - e, u, dt)[0]) / (2 * eps)
        np.testing.assert_allclose(A[:, i], fd, rtol=1e-5, atol=1e-7)
    for i in range(2):
        e = np.zeros(2)
        e[i] = eps
        fd = (step(aug, FALLING, 0.0, xa, u + e, dt)[0] - step(aug, FALLING, 0.0, xa, u - e, dt)[0]) / (2 * eps)
        np.testing.assert_allclose(B[:, i], fd, rtol=1e-5, atol=1e-7)


def test_impact_reset_keeps_barrier_consistent():
    goal = np.array([10.0, 1.0, 0, 0])
    cset = ConstraintSet([CircleObstacle((1.5, 0.8), 0.5)])
    aug = augment_system(bouncing_ball_system(), cset, x_goal=goal, resync=False)
    x = np.array([1.0, 0.0, 0.4, -2.0])
    post = aug.transition(FALLING, RISING).reset(0.0, np.append(x, 0.3), np.zeros(2))
    assert post[4] == pytest.approx(0.3 + barrier_state(cset, post[:4], goal) - barrier_state(cset, x, goal))


def integrated_barrier_error(dt):
    goal = np.array([10.0, 1.0, 0, 0])
    cset = ConstraintSet([CircleObstacle((3.0, 3.0), 1.0), CircleObstacle((6.0, 1.5), 0.7)])
    aug = augment_system(bouncing_ball_system(), cset, x_goal=goal, resync=False)
    x0 = np.array([0.0, 4.0, 0.0, 0.0])
    N = int(round(0.6 / dt))
    U = np.tile([8.0, 9.0], (N, 1))
    traj = rollout(aug, np.append(x0, barrier_state(cset, x0, goal)), FALLING, U, dt)
    assert traj.events == []
    direct = np.array([barrier_state(cset, x[:4], goal) for x in traj.states])
    return np.max(np.abs(traj.states[:, 4] - direct))


def test_integrated_barrier_converges():
    coarse, fine = integrated_barrier_error(0.02), integrated_barrier_error(0.01)
    assert fine < coarse
    assert coarse / fine >= 4.0


def test_infeasible_knot_costs_inf(params, cost):
    cset = ConstraintSet([CircleObstacle((0.0, 2.0), 0.5)])
    aug = augment_system(bouncing_ball_system(), cset, x_goal=params.x_goal)
    bcost = BarrierCost(cost, cset, BarrierConfig())
    traj = rollout(aug, np.append(params.x0, 0.0), FALLING, np.zeros((100, 2)), params.dt)
    assert bcost.total(traj) == np.inf


def test_no_obstacles_matches_unconstrained(ball, cost, params):
    x0 = np.asarray(params.x0)
    U = np.zeros((params.N, 2))
    rep = solve_dbas(ball, x0, FALLING, U, cost, ConstraintSet([]), dt=params.dt)
    plain = solve(ball, x0, FALLING, U, cost, dt=params.dt)
    assert rep.status is Status.CONVERGED
    assert rep.final_position_error <= 5e-2
    np.testing.assert_allclose(rep.trajectory.states, plain.trajectory.states, atol=1e-9)
    np.testing.assert_array_equal(rep.barrier_states, 0.0)


def test_mid_path_obstacle_stays_feasible(ball, cost, params):
    cset = ConstraintSet([CircleObstacle((5.0, 2.5), 1.0)])
    accepted = []
    rep = solve_dbas(ball, np.asarray(params.x0), FALLING, np.zeros((params.N, 2)), cost, cset,
                     dt=params.dt, diagnostics=accepted.append)
    assert rep.status is Status.CONVERGED
    assert rep.final_position_error <= 5e-2
    assert len(rep.constraint_history) == len([r for r in accepted if r["alpha"]]) + 1
    assert max(rep.constraint_history) < 0.0
    assert trajectory_feasible(cset, rep.trajectory)[0]


def test_infeasible_start_is_reported(ball, cost, params):
    cset = ConstraintSet([CircleObstacle((0.0, 2.0), 0.5)])
    rep = solve_dbas(ball, np.asarray(params.x0), FALLING, np.zeros((params.N, 2)), cost, cset, dt=params.dt)
    assert rep.status is Status.INFEASIBLE_START
    assert rep.iterations == 0


def test_input_boxes_are_clamped(ball, cost, params):
    cset = ConstraintSet([InputBox(-3.0, 3.0, 0)])
    rep = solve_dbas(ball, np.asarray(params.x0), FALLING, np.full((params.N, 2), 5.0), cost, cset,
                     opts=SolverOptions(max_iterations=5), dt=params.dt)
    assert np.all(np.abs(rep.trajectory.controls[:, 0]) <= 3.0)


def test_config_validation():
    with pytest.raises(ValueError):
        BarrierConfig(q_w=-1.0)
    assert BarrierConfig(q_w=2.0).terminal_weight == 2.0
    assert BarrierConfig(q_w=2.0, q_wN=3.0).terminal_weight == 3.0
