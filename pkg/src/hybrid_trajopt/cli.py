"""Command-line entry point: ``hybrid-trajopt {solve,batch,stats}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench.batch import METHODS, BatchStatistics, MethodConfig, run_batch, run_scenario
from .bench.export import (
    ExportError,
    export_results,
    read_manifest,
    read_runs,
    write_manifest,
    write_runs,
    write_statistics,
    write_trajectory_csv,
)
from .bench.scenarios import Scenario, StartClass, generate_scenarios
from .errors import SamplingExhausted
from .ilqr import diagnostics_printer

log = logging.getLogger("hybrid_trajopt")

DEFAULT_COUNT = 20


class ConfigError(ValueError):
    pass


def _method_config(args, base: dict | None = None) -> MethodConfig:
    """Defaults, then a scenario file's ``config`` block, then command-line flags."""
    try:
        cfg = MethodConfig.from_dict(base or {})
    except TypeError as err:
        raise ConfigError(f"invalid solver config ({err})") from err
    if args.qw is not None:
        cfg.q_w = args.qw
    if args.mu0 is not None:
        cfg.mu0 = args.mu0
    if args.phi is not None:
        cfg.phi = args.phi
    if args.max_iters is not None:
        cfg.max_iterations = args.max_iters
    if cfg.q_w < 0 or cfg.mu0 <= 0 or cfg.phi <= 1 or cfg.max_iterations < 0:
        raise ConfigError("need qw >= 0, mu0 > 0, phi > 1, max-iters >= 0")
    return cfg


def _parse_counts(text: str) -> list[int]:
    """``"3"``, ``"1-6"`` or ``"1,2,5"``."""
    out: list[int] = []
    try:
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise ConfigError(f"bad obstacle counts {text!r}") from None
    if not out or any(not 1 <= c <= 10 for c in out):
        raise ConfigError("obstacle counts must lie in 1..10")
    return out


def _start_classes(args) -> list[StartClass]:
    if args.start is None:
        return [StartClass.FEASIBLE, StartClass.INFEASIBLE]
    return [StartClass(args.start)]


def _load_scenario(path: Path) -> tuple[Scenario, dict]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ExportError(f"cannot read {path}: {err.strerror or err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    try:
        return Scenario.from_dict(data), data.get("config") or {}
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"{path}: invalid scenario ({err})") from err


def cmd_solve(args) -> int:
    base = {}
    if args.scenario is not None:
        scn, base = _load_scenario(Path(args.scenario))
    else:
        start = StartClass(args.start or StartClass.FEASIBLE)
        counts = _parse_counts(args.obstacles)
        scn = generate_scenarios(args.seed, counts[0], 1, start)[0]
    cfg = _method_config(args, base)
    out = Path(args.out)
    diag = diagnostics_printer(sys.stderr) if args.verbose else None
    res = run_scenario(scn, args.method, cfg, keep_trajectory=True, diagnostics=diag)
    write_trajectory_csv(out / "trajectory.csv", res.trajectory, res.barrier_states)
    write_runs(out / "report.jsonl", [res])
    saved = scn.to_dict() | {"config": cfg.to_dict()}
    (out / "scenario.json").write_text(json.dumps(saved) + "\n", encoding="utf-8")
    print(
        f"{res.method}: {res.status} in {res.iterations} iterations, "
        f"cost {res.final_cost:.6g}, position error {res.position_error:.3g}, "
        f"violation {res.max_violation:.3g}, success {res.success}"
    )
    return 0


def _batch_plan(args) -> dict:
    return {
        "seed": args.seed,
        "obstacle_counts": _parse_counts(args.obstacles),
        "count": args.count,
        "start_classes": [s.value for s in _start_classes(args)],
        "methods": [args.method] if args.method else list(METHODS),
        "config": _method_config(args).to_dict(),
    }


def run_plan(plan: dict, out: Path, jobs: int = 1, keep_trajectories: bool = False):
    cfg = MethodConfig.from_dict(plan["config"])
    results = []
    for start in plan["start_classes"]:
        for n in plan["obstacle_counts"]:
            scns = generate_scenarios(plan["seed"], n, plan["count"], start)
            for method in plan["methods"]:
                log.info("batch: %s, %d obstacles, %s starts", method, n, start)
                results += run_batch(scns, method, cfg, jobs=jobs, keep_trajectories=keep_trajectories)
    stats = BatchStatistics.from_results(results)
    export_results(stats, results, out)
    write_manifest(out / "manifest.json", {"plan": plan})
    return stats, results


def cmd_batch(args) -> int:
    if args.manifest is not None:
        plan = read_manifest(Path(args.manifest)).get("plan")
        if not isinstance(plan, dict):
            raise ConfigError(f"{args.manifest}: manifest has no plan")
    else:
        plan = _batch_plan(args)
    stats, _ = run_plan(plan, Path(args.out), args.jobs, args.trajectories)
    _print_stats(stats)
    return 0


def cmd_stats(args) -> int:
    results = []
    for d in args.runs:
        p = Path(d)
        p = p / "runs.jsonl" if p.is_dir() else p
        try:
            results += read_runs(p)
        except OSError as err:
            raise ExportError(f"cannot read {p}: {err.strerror or err}") from err
    stats = BatchStatistics.from_results(results)
    if args.out:
        write_statistics(Path(args.out) / "statistics.csv", stats)
    _print_stats(stats)
    return 0


def _print_stats(stats: BatchStatistics):
    print(f"{'method':6} {'obst':>4} {'start':10} {'n':>4} {'success%':>9} {'iters(med)':>10}")
    for r in stats.rows:
        print(
            f"{r['method']:6} {r['obstacle_count']:4d} {r['start_class']:10} {r['scenarios']:4d} "
            f"{r['success_rate']:9.1f} {r['iter_median']:10.1f}"
        )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--obstacles", default="1", help="count, range (1-6) or list (1,3,5)")
    common.add_argument("--seed", type=int, default=0)
    start = common.add_mutually_exclusive_group()
    start.add_argument("--feasible-start", dest="start", action="store_const", const="feasible")
    start.add_argument("--infeasible-start", dest="start", action="store_const", const="infeasible")
    common.add_argument("--qw", type=float, help="barrier-state weight")
    common.add_argument("--mu0", type=float, help="initial AL penalty")
    common.add_argument("--phi", type=float, help="AL penalty growth factor")
    common.add_argument("--max-iters", type=int, help="HiLQR iteration cap (per inner solve)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="per-iteration diagnostics on stderr")

    parser = argparse.ArgumentParser(prog="hybrid-trajopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one scenario")
    p.add_argument("scenario", nargs="?", help="scenario JSON; generated from --seed when absent")
    p.add_argument("--method", choices=METHODS, default="al")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("batch", parents=[common], help="sweep obstacle counts x start classes x methods")
    p.add_argument("--method", choices=METHODS, help="default: both")
    p.add_argument("--count", type=int, default=DEFAULT_COUNT, help="scenarios per obstacle count")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--manifest", help="replay the plan stored in a manifest.json")
    p.add_argument("--trajectories", action="store_true", help="also write every trajectory CSV")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("stats", help="re-aggregate statistics from run directories")
    p.add_argument("runs", nargs="+", help="run directories or runs.jsonl files")
    p.add_argument("--out", help="write statistics.csv here")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "count", 1) < 1:
        print("error: --count must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, SamplingExhausted) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ExportError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
