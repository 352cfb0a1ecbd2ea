import json
import math

import numpy as np
import pytest

from hybrid_trajopt.bench.ball import FALLING, BouncingBallParams, bouncing_ball_system
from hybrid_trajopt.bench.batch import BatchStatistics, MethodConfig, RunResult, run_batch, run_scenario
from hybrid_trajopt.bench.export import (
    STAT_COLUMNS,
    ExportError,
    export_results,
    read_runs,
    read_statistics,
    read_trajectory_csv,
    write_trajectory_csv,
)
from hybrid_trajopt.bench.scenarios import (
    ENDPOINT_MARGIN,
    Scenario,
    StartClass,
    classify,
    generate_scenarios,
)
from hybrid_trajopt.constraints import CircleObstacle, ConstraintSet, EllipseObstacle, trajectory_feasible
from hybrid_trajopt.errors import SamplingExhausted
from hybrid_trajopt.hybrid import rollout


def test_generation_is_deterministic():
    a = generate_scenarios(7, 1, 5, "feasible")
    b = generate_scenarios(7, 1, 5, "feasible")
    assert [s.to_dict() for s in a] == [s.to_dict() for s in b]
    c = generate_scenarios(8, 1, 5, "feasible")
    assert [s.to_dict() for s in a] != [s.to_dict() for s in c]


def test_prefix_stability():
    short = generate_scenarios(3, 2, 2, "infeasible")
    long = generate_scenarios(3, 2, 4, "infeasible")
    assert [s.to_dict() for s in short] == [s.to_dict() for s in long[:2]]


@pytest.mark.parametrize("start", list(StartClass))
def test_start_class_contract(start, ball, params):
    for scn in generate_scenarios(11, 3, 5, start):
        traj = rollout(ball, np.asarray(params.x0), FALLING, scn.initial_controls, params.dt)
        assert trajectory_feasible(scn.obstacles, traj)[0] == (start is StartClass.FEASIBLE)
        assert classify(scn.obstacles, scn.initial_controls, params) is start
        assert scn.obstacle_count == len(scn.obstacles.constraints) == 3


def test_obstacles_inside_workspace_and_clear_of_endpoints(params):
    for scn in generate_scenarios(5, 10, 3, "feasible"):
        for ob in scn.obstacles.constraints:
            cy, cz = ob.center
            assert 0.0 <= cy <= 10.0 and 0.0 <= cz <= 6.0
            extent = ob.radius if isinstance(ob, CircleObstacle) else max(ob.semi_axes)
            assert isinstance(ob, (CircleObstacle, EllipseObstacle))
            for q in (params.x0[:2], params.goal):
                assert math.hypot(cy - q[0], cz - q[1]) > extent + ENDPOINT_MARGIN


def test_generation_arguments():
    with pytest.raises(ValueError):
        generate_scenarios(0, 0, 1, "feasible")
    with pytest.raises(ValueError):
        generate_scenarios(0, 11, 1, "feasible")
    with pytest.raises(ValueError):
        generate_scenarios(0, 1, 0, "feasible")
    with pytest.raises(ValueError):
        generate_scenarios(0, 1, 1, "sideways")


def test_impossible_class_exhausts():
    # a one-step horizon never leaves the cleared start region
    with pytest.raises(SamplingExhausted):
        generate_scenarios(0, 1, 1, "infeasible", BouncingBallParams(N=1), max_attempts=30, controls_per_layout=2)


def test_scenario_dict_round_trip():
    scn = generate_scenarios(2, 4, 1, "infeasible")[0]
    back = Scenario.from_dict(json.loads(json.dumps(scn.to_dict())))
    assert back.to_dict() == scn.to_dict()


def test_missing_controls_regenerated_from_seed():
    d = generate_scenarios(2, 1, 1, "feasible")[0].to_dict()
    d.pop("initial_controls")
    d.pop("start_class")
    a, b = Scenario.from_dict(d), Scenario.from_dict(d)
    np.testing.assert_array_equal(a.initial_controls, b.initial_controls)
    assert a.initial_controls.shape == (200, 2)
    assert a.start_class is classify(a.obstacles, a.initial_controls, a.params)


def fake(method, count, start, status, success, iterations, cost, index=0):
    return {
        "method": method, "seed": 0, "index": index, "obstacle_count": count, "start_class": start,
        "status": status, "success": success, "iterations": iterations, "final_cost": cost,
        "position_error": 0.0, "max_violation": 0.0, "iterate_worst": float("nan"),
    }


def test_statistics_rows_and_taxonomy():
    runs = [
        fake("al", 1, "feasible", "Converged", True, 10, 1.0, 0),
        fake("al", 1, "feasible", "Converged", False, 20, 2.0, 1),
        fake("al", 1, "feasible", "PenaltyOverflow", False, 30, 3.0, 2),
        fake("al", 1, "feasible", "NumericalFailure", False, 0, float("inf"), 3),
        fake("dbas", 2, "infeasible", "InfeasibleStart", False, 0, float("inf")),
    ]
    stats = BatchStatistics.from_results(runs)
    assert len(stats.rows) == 2
    r = stats.row("al", 1, "feasible")
    assert (r["scenarios"], r["successes"], r["converged"]) == (4, 1, 2)
    assert r["success_rate"] == 25.0
    assert r["iter_median"] == 15.0  # converged runs only
    assert r["cost_median"] == 2.0  # finite costs only
    assert (r["converged_unsuccessful"], r["non_convergence"], r["numerical_failure"]) == (1, 1, 1)
    d = stats.row("dbas", 2, "infeasible")
    assert d["infeasible_start"] == 1 and math.isnan(d["iter_median"])
    assert stats.success_rate("al", "feasible") == 25.0
    for row in stats.rows:
        assert 0 <= row["successes"] <= row["scenarios"]
        assert 0.0 <= row["success_rate"] <= 100.0


def test_statistics_independent_of_order():
    runs = [fake("al", 1, "feasible", "Converged", i % 2 == 0, i, float(i), i) for i in range(6)]
    assert BatchStatistics.from_results(runs).rows == BatchStatistics.from_results(runs[::-1]).rows


def test_empty_statistics():
    assert BatchStatistics.from_results([]).rows == []
    assert run_batch([], "al") == []


def test_trajectory_csv_round_trip(tmp_path, ball, params, rng):
    traj = rollout(ball, np.asarray(params.x0), FALLING, rng.uniform(-10, 10, (params.N, 2)), params.dt)
    w = rng.normal(size=params.N + 1)
    path = write_trajectory_csv(tmp_path / "t.csv", traj, w)
    back = read_trajectory_csv(path)
    p15 = lambda a: np.array([float("%.15g" % v) for v in np.ravel(a)]).reshape(np.shape(a))
    for j, name in enumerate(("y", "z", "vy", "vz")):
        np.testing.assert_array_equal(back[name], p15(traj.states[:, j]))
    np.testing.assert_array_equal(back["Fy"][:-1], p15(traj.controls[:, 0]))
    assert np.isnan(back["Fz"][-1])
    np.testing.assert_array_equal(back["mode"], traj.modes)
    np.testing.assert_array_equal(back["w"], p15(w))
    assert list(back) == ["t", "y", "z", "vy", "vz", "Fy", "Fz", "mode", "w"]


def test_unwritable_path_reports_context(tmp_path, ball, params):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    traj = rollout(ball, np.asarray(params.x0), FALLING, np.zeros((3, 2)), params.dt)
    with pytest.raises(ExportError, match="file"):
        write_trajectory_csv(blocker / "sub" / "t.csv", traj)


@pytest.fixture(scope="module")
def small_runs():
    scns = generate_scenarios(1, 1, 2, "feasible")
    cfg = MethodConfig(max_iterations=60)
    return scns, [run_scenario(s, m, cfg, keep_trajectory=True) for s in scns for m in ("dbas", "al")]


def test_run_scenario_fields(small_runs):
    scns, runs = small_runs
    for r in runs:
        assert isinstance(r, RunResult)
        assert r.success == (r.status == "Converged" and r.max_violation <= 1e-4 and r.position_error <= 5e-2)
        assert r.trajectory.horizon == 200
    dbas = [r for r in runs if r.method == "dbas"]
    assert all(r.iterate_worst < 0.0 for r in dbas)
    assert all(r.barrier_states is not None for r in dbas)


def test_parallel_batch_matches_serial(small_runs):
    scns, runs = small_runs
    cfg = MethodConfig(max_iterations=60)
    par = run_batch(scns, "al", cfg, jobs=2)
    serial = [r for r in runs if r.method == "al"]
    key = lambda rs: [json.dumps(r.summary() | {"wall_time": 0}) for r in rs]  # nan-safe comparison
    assert key(par) == key(serial)


def test_export_layout(tmp_path, small_runs):
    _, runs = small_runs
    stats = BatchStatistics.from_results(runs)
    written = export_results(stats, runs, tmp_path, {"plan": {"seed": 1}})
    assert set(written) == {"statistics", "runs", "manifest"}
    rows = read_statistics(tmp_path / "statistics.csv")
    assert list(rows[0]) == list(STAT_COLUMNS)
    assert len(rows) == 2  # one per method
    assert len(list((tmp_path / "trajectories").iterdir())) == len(runs)
    back = read_runs(tmp_path / "runs.jsonl")
    assert BatchStatistics.from_results(back).rows == stats.rows
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["plan"] == {"seed": 1} and "numpy" in manifest["versions"]


def test_removing_obstacles_never_hurts(small_runs):
    scns, runs = small_runs
    cfg = MethodConfig(max_iterations=60)
    for scn, r in zip(scns, [r for r in runs if r.method == "al"]):
        if not r.success:
            free = Scenario(scn.seed, ConstraintSet([]), scn.initial_controls, scn.start_class, 0, scn.params)
            assert run_scenario(free, "al", cfg).success


def test_unknown_method():
    scn = generate_scenarios(1, 1, 1, "feasible")[0]
    with pytest.raises(ValueError):
        run_scenario(scn, "penalty")


def test_ball_options():
    sys = bouncing_ball_system(BouncingBallParams(), integrator="euler")
    assert sys.modes[FALLING].flow is None


def test_activation_schedule_round_trip_and_use():
    scn = generate_scenarios(4, 2, 1, "feasible")[0]
    scn.activate_after = {1: 2}
    back = Scenario.from_dict(json.loads(json.dumps(scn.to_dict())))
    assert back.activate_after == {1: 2}
    assert Scenario.from_dict(generate_scenarios(4, 2, 1, "feasible")[0].to_dict()).activate_after is None
    run = run_scenario(back, "al", MethodConfig(max_iterations=40))
    assert run.status in ("Converged", "PenaltyOverflow", "MaxOuterIterations")
