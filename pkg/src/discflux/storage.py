"""Artifact IO: field and trajectory CSVs, trace CSVs, distance matrices and
JSON manifests.

Floats are written with repr(), the shortest round-tripping form, so repeated
runs of the same study produce byte-identical files.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .solver import Field, Grid, Trajectory


def _fmt(x) -> str:
    return repr(float(x))


def _header(d: int) -> str:
    return "t," + ",".join(f"x{k + 1}" for k in range(d)) + ",u"


def write_field_csv(path, field: Field):
    write_trajectory_rows(path, field.grid, [field.time], field.values[None, ...])


def write_trajectory_csv(path, trajectory: Trajectory):
    write_trajectory_rows(path, trajectory.grid, trajectory.times, trajectory.states)


def write_trajectory_rows(path, grid: Grid, times, states):
    pts = grid.points().reshape(-1, grid.d)
    with open(path, "w") as fh:
        fh.write(_header(grid.d) + "\n")
        for i, t in enumerate(times):
            ts = _fmt(t)
            flat = np.asarray(states[i]).reshape(-1)
            for row, value in zip(pts, flat):
                fh.write(ts + "," + ",".join(_fmt(c) for c in row) + "," + _fmt(value) + "\n")


def _grid_from_columns(columns: list[np.ndarray]) -> Grid:
    lows, highs, counts = [], [], []
    for col in columns:
        centers = np.unique(col)
        if centers.size < 2:
            raise ValueError("cannot reconstruct a grid axis from fewer than 2 distinct coordinates")
        dx = np.diff(centers)
        if not np.allclose(dx, dx[0], rtol=1e-9, atol=1e-12):
            raise ValueError("field CSV is not on a uniform grid")
        step = float(dx[0])
        lows.append(float(centers[0] - step / 2))
        highs.append(float(centers[-1] + step / 2))
        counts.append(centers.size)
    return Grid(tuple(lows), tuple(highs), tuple(counts))


def read_trajectory_csv(path) -> Trajectory:
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    d = len(names) - 2
    t_col = np.asarray(data["t"], dtype=float)
    x_cols = [np.asarray(data[f"x{k + 1}"], dtype=float) for k in range(d)]
    u_col = np.asarray(data["u"], dtype=float)

    times = np.unique(t_col)
    grid = _grid_from_columns(x_cols)
    states = np.empty((times.size,) + tuple(grid.counts))
    dx = grid.dx
    t_idx = np.searchsorted(times, t_col)
    cell_idx = tuple(
        np.clip(np.round((x_cols[k] - grid.lows[k] - dx[k] / 2) / dx[k]).astype(int), 0, grid.counts[k] - 1)
        for k in range(d)
    )
    filled = np.zeros((times.size,) + tuple(grid.counts), dtype=bool)
    states[(t_idx,) + cell_idx] = u_col
    filled[(t_idx,) + cell_idx] = True
    if not filled.all():
        raise ValueError("field CSV does not cover the full grid")
    return Trajectory(grid=grid, times=tuple(float(t) for t in times), states=states, manifest={})


def read_field_csv(path) -> Field:
    traj = read_trajectory_csv(path)
    if len(traj.times) != 1:
        raise ValueError(f"expected a single-time field CSV, found {len(traj.times)} times")
    return traj.field(0)


def write_trace_csv(path, trace):
    """Interface trace as t,s,p_u with s the tangential parameter (0 in 1D)."""
    p = trace.averaged
    with open(path, "w") as fh:
        fh.write("t,s,p_u\n")
        for i, t in enumerate(trace.times):
            ts = _fmt(t)
            for m in range(p.shape[1]):
                s = trace.tangential_points[m, 0] if trace.tangential_points.shape[1] else 0.0
                fh.write(ts + "," + _fmt(s) + "," + _fmt(p[i, m]) + "\n")


def write_manifest(path, data: dict):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_matrix_csv(path, ids, matrix):
    matrix = np.asarray(matrix)
    with open(path, "w") as fh:
        fh.write("id," + ",".join(ids) + "\n")
        for i, row_id in enumerate(ids):
            fh.write(row_id + "," + ",".join(_fmt(v) for v in matrix[i]) + "\n")


def read_matrix_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    ids = lines[0].split(",")[1:]
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append([float(v) for v in cells[1:]])
    return ids, np.asarray(rows)


def write_deltas_csv(path, epsilons, deltas):
    with open(path, "w") as fh:
        fh.write("eps_coarse,eps_fine,delta\n")
        for k, delta in enumerate(deltas):
            fh.write(_fmt(epsilons[k]) + "," + _fmt(epsilons[k + 1]) + "," + _fmt(delta) + "\n")


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
