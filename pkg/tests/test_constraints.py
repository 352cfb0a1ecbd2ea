import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_trajopt.bench.ball import FALLING
from hybrid_trajopt.constraints import (
    CircleObstacle,
    ConstraintSet,
    EllipseObstacle,
    HalfPlane,
    InputBox,
    constraint_from_dict,
    trajectory_feasible,
)
from hybrid_trajopt.hybrid import HybridTrajectory, rollout


def test_circle_value_by_hand():
    cs = ConstraintSet([CircleObstacle((5.0, 2.0), 1.0)])
    g, Gx, Gu = cs.evaluate(np.array([5.0, 4.0, 0.0, 0.0]), np.zeros(2))
    assert g.tolist() == [-3.0]
    np.testing.assert_array_equal(Gx, [[0.0, -4.0, 0.0, 0.0]])
    np.testing.assert_array_equal(Gu, [[0.0, 0.0]])


def test_boundary_point_is_zero():
    cs = ConstraintSet([CircleObstacle((5.0, 2.0), 1.0)])
    assert cs.values(np.array([6.0, 2.0, 0.0, 0.0]))[0] == 0.0


def test_empty_set():
    cs = ConstraintSet([])
    assert cs.values(np.zeros(4)).shape == (0,)
    assert cs.max_violation(np.zeros(4)) == -np.inf


def test_half_plane_and_input_box():
    cs = ConstraintSet([HalfPlane((0.0, 1.0), 5.0), InputBox(-2.0, 3.0, 1)])
    g = cs.values(np.array([1.0, 4.0, 0.0, 0.0]), np.array([0.0, 4.0]))
    np.testing.assert_allclose(g, [-1.0, 1.0, -6.0])
    assert cs.size == 3
    assert cs.state_only().size == 1


def test_ellipse_value():
    cs = ConstraintSet([EllipseObstacle((0.0, 0.0), (2.0, 1.0))])
    assert cs.values(np.array([2.0, 0.0, 0.0, 0.0]))[0] == pytest.approx(0.0)
    assert cs.values(np.array([0.0, 0.5, 0.0, 0.0]))[0] == pytest.approx(0.75)


def test_invalid_shapes():
    with pytest.raises(ValueError):
        CircleObstacle((0, 0), 0.0)
    with pytest.raises(ValueError):
        EllipseObstacle((0, 0), (1.0, -1.0))
    with pytest.raises(ValueError):
        InputBox(1.0, 0.0, 0)


def mixed_set():
    return ConstraintSet(
        [
            CircleObstacle((5.0, 2.0), 1.0),
            EllipseObstacle((3.0, 1.0), (0.5, 1.5)),
            HalfPlane((1.0, -2.0), 0.3),
            InputBox(-1.0, 1.0, 0),
        ]
    )


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=4, max_size=4),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
)
def test_jacobians_match_finite_differences(xs, us):
    cs = mixed_set()
    x, u = np.array(xs), np.array(us)
    _, Gx, Gu = cs.evaluate(x, u)
    eps = 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = eps
        fd = (cs.values(x + e, u) - cs.values(x - e, u)) / (2 * eps)
        np.testing.assert_allclose(Gx[:, i], fd, atol=1e-6 * (1 + np.abs(fd).max()))
    for i in range(2):
        e = np.zeros(2)
        e[i] = eps
        fd = (cs.values(x, u + e) - cs.values(x, u - e)) / (2 * eps)
        np.testing.assert_allclose(Gu[:, i], fd, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_hessian_matches_finite_differences(xs):
    cs = mixed_set()
    x = np.array(xs)
    H = cs.hessian_x()
    eps = 1e-5
    for i in range(4):
        e = np.zeros(4)
        e[i] = eps
        fd = (cs.evaluate(x + e)[1] - cs.evaluate(x - e)[1]) / (2 * eps)
        np.testing.assert_allclose(H[:, :, i], fd, atol=1e-6)


def test_vectorized_matches_pointwise(rng):
    cs = mixed_set()
    X = rng.normal(size=(7, 4))
    U = rng.normal(size=(7, 2))
    G = cs.values_many(X, U)
    Gx, Gu = cs.jacobians_many(X)
    for k in range(7):
        g, gx, gu = cs.evaluate(X[k], U[k])
        np.testing.assert_allclose(G[k], g, atol=1e-12)
        np.testing.assert_allclose(Gx[k], gx, atol=1e-12)
        np.testing.assert_allclose(Gu[k], gu, atol=1e-12)


def test_dict_round_trip():
    cs = mixed_set()
    back = ConstraintSet([constraint_from_dict(d) for d in cs.to_list()])
    assert back.constraints == cs.constraints
    with pytest.raises(ValueError):
        constraint_from_dict({"kind": "torus"})


def test_passive_rollout_without_obstacles_is_feasible(ball):
    traj = rollout(ball, np.array([0.0, 4.0, 0.0, 0.0]), FALLING, np.zeros((200, 2)), 0.02)
    assert trajectory_feasible(ConstraintSet([]), traj) == (True, None)


def straight_line(N=100):
    """Constant-velocity path from (0, 2.5) to (10, 2.5)."""
    s = np.linspace(0.0, 10.0, N + 1)
    X = np.column_stack([s, np.full(N + 1, 2.5), np.full(N + 1, 1.0), np.zeros(N + 1)])
    return HybridTrajectory(X, np.zeros((N, 2)), [FALLING] * (N + 1), [], 0.1)


def test_mid_path_obstacle_is_detected():
    cs = ConstraintSet([CircleObstacle((5.0, 2.5), 1.0)])
    ok, (k, j, val) = trajectory_feasible(cs, straight_line())
    assert not ok
    assert (k, j) == (50, 0)  # the knot at y = 5 crosses the center
    assert val == pytest.approx(1.0)


def test_grazing_knot_is_infeasible():
    cs = ConstraintSet([CircleObstacle((5.0, 3.5), 1.0)])
    ok, (k, _, val) = trajectory_feasible(cs, straight_line())
    assert not ok and k == 50 and val == 0.0


def test_input_rows_skip_terminal_knot():
    traj = straight_line(4)
    cs = ConstraintSet([InputBox(-1.0, 1.0, 0)])
    assert trajectory_feasible(cs, traj)[0]
