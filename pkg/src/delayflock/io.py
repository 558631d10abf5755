"""CSV and JSON export/import for trajectories and tabulated histories."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .particles import InitialHistory


def state_header(n: int, d: int, time_col: str = "t"):
    cols = [time_col]
    cols += [f"x_{i}_{c}" for i in range(1, n + 1) for c in range(1, d + 1)]
    cols += [f"v_{i}_{c}" for i in range(1, n + 1) for c in range(1, d + 1)]
    return cols


def _write_table(path, header, rows):
    # %.17g round-trips doubles exactly; fixed formatting keeps output byte-stable
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="", newline="\n")


def write_trajectory_csv(traj, path):
    """One row per recorded time: t, x_1_1..x_N_d, v_1_1..v_N_d."""
    k = len(traj)
    rows = np.hstack([traj.times[:, None], traj.positions.reshape(k, -1), traj.velocities.reshape(k, -1)])
    _write_table(path, state_header(traj.N, traj.d), rows)


def write_series_csv(path, header, columns):
    _write_table(path, header, np.column_stack(columns))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc


def read_state_table(path):
    """Parse a state CSV into (times (M,), positions (M, N, d), velocities (M, N, d))."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 3 or (len(header) - 1) % 2:
        raise ConfigurationError(f"{path}: expected columns t, x_i_c..., v_i_c...")
    xcols = [h for h in header[1:] if h.startswith("x_")]
    if not xcols or len(xcols) * 2 != len(header) - 1:
        raise ConfigurationError(f"{path}: position and velocity columns do not match")
    try:
        n = max(int(h.split("_")[1]) for h in xcols)
        d = max(int(h.split("_")[2]) for h in xcols)
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed column names") from exc
    if n * d != len(xcols) or header != state_header(n, d, header[0]):
        raise ConfigurationError(f"{path}: columns must be ordered as x_1_1..x_N_d, v_1_1..v_N_d")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    m = data.shape[0]
    return data[:, 0], data[:, 1 : 1 + n * d].reshape(m, n, d), data[:, 1 + n * d :].reshape(m, n, d)


def read_history_csv(path, tau: float) -> InitialHistory:
    """Tabulated history from a state CSV whose time column covers [-tau, 0]."""
    times, xs, vs = read_state_table(path)
    return InitialHistory.tabulated(tau, times, xs, vs)
