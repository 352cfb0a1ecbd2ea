"""File outputs: trajectory CSVs, statistics tables, run records and manifests."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np

from .batch import BatchStatistics, RunResult

TRAJECTORY_COLUMNS = ("t", "y", "z", "vy", "vz", "Fy", "Fz", "mode")
STAT_COLUMNS = (
    "method",
    "obstacle_count",
    "start_class",
    "scenarios",
    "successes",
    "success_rate",
    "converged",
    "iter_q1",
    "iter_median",
    "iter_q3",
    "cost_q1",
    "cost_median",
    "cost_q3",
    "converged_unsuccessful",
    "non_convergence",
    "numerical_failure",
    "infeasible_start",
)


class ExportError(OSError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.15g" % float(v)
    return str(v)


def _open(path: Path, mode="w"):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="", encoding="utf-8")
    except OSError as err:
        raise ExportError(f"cannot write {path}: {err.strerror or err}") from err


def write_trajectory_csv(path, traj, barrier_states=None) -> Path:
    """One row per knot; the last knot has no control so its force cells are empty."""
    path = Path(path)
    cols = TRAJECTORY_COLUMNS + (("w",) if barrier_states is not None else ())
    N = traj.horizon
    t = traj.times
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(N + 1):
            row = [_fmt(t[k])] + [_fmt(v) for v in traj.states[k, :4]]
            row += [_fmt(v) for v in traj.controls[k]] if k < N else ["", ""]
            row.append(_fmt(traj.modes[k]))
            if barrier_states is not None:
                row.append(_fmt(barrier_states[k]))
            w.writerow(row)
    return path


def read_trajectory_csv(path) -> dict:
    """Columns as arrays; the missing final controls come back as nan."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise ExportError(f"cannot read {path}: {err.strerror or err}") from err
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        if name == "mode":
            out[name] = np.array([int(v) for v in vals])
        else:
            out[name] = np.array([float(v) if v != "" else np.nan for v in vals])
    return out


def write_statistics(path, stats: BatchStatistics) -> Path:
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAT_COLUMNS)
        for r in stats.rows:
            w.writerow([_fmt(r[c]) for c in STAT_COLUMNS])
    return path


def read_statistics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)  # "inf" / "nan"
    return v


def write_runs(path, results: list[RunResult]) -> Path:
    """Per-run summaries, one JSON object per line."""
    path = Path(path)
    with _open(path) as fh:
        for r in results:
            d = {k: _json_safe(v) for k, v in r.summary().items()}
            d.pop("wall_time", None)
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    return path


def read_runs(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                for k in ("final_cost", "position_error", "max_violation", "iterate_worst"):
                    d[k] = float(d[k])
                out.append(d)
    return out


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    from .. import __version__

    data = dict(manifest)
    data.setdefault(
        "versions",
        {"hybrid_trajopt": __version__, "numpy": np.__version__, "python": platform.python_version()},
    )
    with _open(path) as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise ExportError(f"cannot read {path}: {err.strerror or err}") from err


def export_results(stats: BatchStatistics, results: list[RunResult], path, manifest: dict | None = None) -> dict:
    """Write ``statistics.csv``, ``runs.jsonl``, trajectories and ``manifest.json`` under ``path``."""
    root = Path(path)
    written = {
        "statistics": write_statistics(root / "statistics.csv", stats),
        "runs": write_runs(root / "runs.jsonl", results),
    }
    for r in results:
        if r.trajectory is not None:
            name = f"{r.method}_n{r.obstacle_count}_{r.start_class}_{r.index:03d}.csv"
            write_trajectory_csv(root / "trajectories" / name, r.trajectory, r.barrier_states)
    if manifest is not None:
        written["manifest"] = write_manifest(root / "manifest.json", manifest)
    return written
