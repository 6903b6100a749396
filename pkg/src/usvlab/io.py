"""Output files: trajectory and envelope CSVs, reports, plot data and the run manifest.

Everything except ``manifest.json`` is a pure function of (config, seed,
version), so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IoError
from .formation import FormationConfig, STATE_WIDTH, VY, VY_STAR
from .sim import MonteCarloSummary, Trajectory

TRAJECTORY_COLUMNS = ("t", "agent", "x", "y", "theta", "vx", "vy", "omega", "ex", "ey", "etheta",
                      "vbar_y", "vtilde_norm", "tau_x", "tau_omega")
ENVELOPE_COLUMNS = ("t", "agent", "emin", "emedian", "emax")
FLOAT_FMT = "%.9g"


def _ensure_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(out, exc.strerror or str(exc)) from None
    if not out.is_dir():
        raise IoError(out, "not a directory")
    return out


def _write_text(path: Path, text: str) -> Path:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None
    return path


def _table(columns, rows: np.ndarray, int_cols=(1,)) -> str:
    fmt = [("%d" if j in int_cols else FLOAT_FMT) for j in range(len(columns))]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(f % (int(v) if f == "%d" else v) for f, v in zip(fmt, row)))
    return "\n".join(lines) + "\n"


def trajectory_table(traj: Trajectory) -> np.ndarray:
    """Rows of ``trajectory.csv``: time-major, then agent (agent 0 is the virtual leader)."""
    K, N, _ = traj.states.shape
    err = traj.errors
    rows = np.zeros((K, N, len(TRAJECTORY_COLUMNS)))
    rows[..., 0] = traj.t[:, None]
    rows[..., 1] = np.arange(N)[None, :]
    rows[..., 2:8] = traj.states[..., :6]
    rows[:, 1:, 8:11] = err.e
    rows[:, 1:, 11] = err.vbar_y
    rows[:, 1:, 12] = err.vtilde_norm
    rows[..., 13:15] = traj.torques
    return rows.reshape(K * N, -1)


def write_trajectory(traj: Trajectory, out_dir) -> list[Path]:
    out = _ensure_dir(out_dir)
    paths = [_write_text(out / "trajectory.csv", _table(TRAJECTORY_COLUMNS, trajectory_table(traj)))]
    paths.append(write_paths(traj, out))
    return paths


def write_paths(traj: Trajectory, out_dir) -> Path:
    """x/y series per agent, one block per agent separated by a blank line (gnuplot ``index``)."""
    out = _ensure_dir(out_dir)
    blocks = []
    for a in range(traj.states.shape[1]):
        lines = [f"# agent {a}"]
        xy = traj.states[:, a, :2]
        lines += [f"{FLOAT_FMT % x} {FLOAT_FMT % y}" for x, y in xy]
        blocks.append("\n".join(lines))
    return _write_text(out / "paths.dat", "\n\n\n".join(blocks) + "\n")


def envelope_table(summary: MonteCarloSummary) -> np.ndarray:
    K, n = summary.emin.shape
    rows = np.zeros((K, n, 5))
    rows[..., 0] = summary.t[:, None]
    rows[..., 1] = np.arange(1, n + 1)[None, :]
    rows[..., 2] = summary.emin
    rows[..., 3] = summary.emedian
    rows[..., 4] = summary.emax
    return rows.reshape(K * n, 5)


def write_envelopes(summary: MonteCarloSummary, out_dir) -> list[Path]:
    out = _ensure_dir(out_dir)
    paths = [_write_text(out / "envelopes.csv", _table(ENVELOPE_COLUMNS, envelope_table(summary)))]
    stats = {
        "n_runs": len(summary.seeds),
        "n_completed": summary.n_completed,
        "seeds": [int(s) for s in summary.seeds],
        "diverged": [{"run": r, "t": t} for r, t in summary.diverged],
        "final_ep_norm": summary.final_error_stats(),
    }
    if summary.n_completed:
        stats["sup_ep_norm_last_third"] = summary.sup_over(summary.t[-1] * 2 / 3).max(axis=0).tolist()
    paths.append(write_json(stats, out / "montecarlo_summary.json"))
    return paths


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    _ensure_dir(path.parent)
    return _write_text(path, json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_report(report, out_dir, name: str = "stability_report.json") -> Path:
    data = report.to_dict() if hasattr(report, "to_dict") else report
    return write_json(data, _ensure_dir(out_dir) / name)


def write_config_copy(canonical: str, out_dir) -> Path:
    return _write_text(_ensure_dir(out_dir) / "config.json", canonical)


def write_manifest(out_dir, *, canonical_config: str, seed, argv, command: str, started: _dt.datetime,
                   files=()) -> Path:
    """Reproducibility record. Digest is the sha256 of the stored ``config.json``."""
    out = _ensure_dir(out_dir)
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "seed": seed,
        "config_digest": hashlib.sha256(canonical_config.encode()).hexdigest(),
        "started": started.isoformat(timespec="seconds"),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "files": sorted(Path(f).name for f in files),
    }
    return write_json(manifest, out / "manifest.json")


# ---------------------------------------------------------------------------
# reading back


def read_trajectory(path, cfg: FormationConfig):
    """Rebuild ``(t, states, torques)`` from ``trajectory.csv``.

    The controller state vy* is not stored; it is recovered as vbar_y plus the
    parent's sway velocity.
    """
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise IoError(path, str(exc)) from None
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise IoError(path, "unexpected header")
    N = cfg.n_agents + 1
    if data.shape[0] % N:
        raise IoError(path, f"row count {data.shape[0]} is not a multiple of {N} agents")
    data = data.reshape(-1, N, len(TRAJECTORY_COLUMNS))
    if not np.array_equal(data[0, :, 1], np.arange(N)):
        raise IoError(path, "agent column does not match the config")
    t = data[:, 0, 0]
    states = np.zeros((data.shape[0], N, STATE_WIDTH))
    states[..., :6] = data[..., 2:8]
    parent = cfg.topology.full_parent()
    states[:, 1:, VY_STAR] = data[:, 1:, 11] + states[:, parent[1:], VY]
    return t, states, data[..., 13:15]
