"""Viscous finite-volume solver for the smoothed-interface equation

    du/dt + div F_eps(x, u) = eps * Laplace(u)

on cell-centered grids in d = 1 or 2.  Convection uses the local
Lax-Friedrichs (Rusanov) flux, diffusion the standard second difference, time
stepping is explicit Euler with exact-time substepping at the requested
output times.  Boundary cells are held at the far-field state.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flux import DEFAULT_PROFILE, PiecewiseFlux, SmoothingProfile
from .geometry import Box

CFL_SPEED_FLOOR = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid over a box; every axis needs >= 4 cells."""

    lows: tuple[float, ...]
    highs: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lows) == len(self.highs) == len(self.counts)):
            raise ValueError("grid extents and counts must agree in length")
        if any(n < 4 for n in self.counts):
            raise ValueError("each axis needs at least 4 cells")
        for lo, hi in zip(self.lows, self.highs):
            if not (lo < hi):
                raise ValueError("degenerate grid extent")

    @property
    def d(self) -> int:
        return len(self.counts)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lows, self.highs, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def box(self) -> Box:
        return Box(self.lows, self.highs)

    def centers(self, axis: int) -> np.ndarray:
        dx = self.dx[axis]
        return self.lows[axis] + dx * (np.arange(self.counts[axis]) + 0.5)

    def points(self) -> np.ndarray:
        """Cell-center coordinates, shape (*counts, d)."""
        axes = [self.centers(k) for k in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior_face_points(self, axis: int) -> np.ndarray:
        """Coordinates of the faces between consecutive cells along `axis`,
        cell centers in the other directions; shape has counts[axis]-1 there."""
        coords = [self.centers(k) for k in range(self.d)]
        dx = self.dx[axis]
        coords[axis] = self.lows[axis] + dx * np.arange(1, self.counts[axis])
        mesh = np.meshgrid(*coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    def evaluate(self, fn) -> np.ndarray:
        """Evaluate a callable of points on the cell centers."""
        return np.asarray(fn(self.points()), dtype=float)


@dataclass(frozen=True)
class Field:
    grid: Grid
    values: np.ndarray
    time: float

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.grid.counts):
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.counts}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a viscous run needs besides the initial field.

    smoothing_width defaults to epsilon: one parameter drives the viscosity,
    the interface smoothing and (for rough fluxes) the mollification radius.
    Setting it explicitly enables the optional two-parameter sweep.

    boundary is the pinned far-field state: a single number, or one
    (low side, high side) pair per axis when the data has unequal tails.
    """

    flux: PiecewiseFlux
    epsilon: float
    final_time: float
    boundary: float | Sequence
    cfl: float = 0.45
    output_times: tuple[float, ...] | None = None
    smoothing_width: float | None = None
    profile: SmoothingProfile = DEFAULT_PROFILE

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.final_time <= 0:
            raise ValueError("final_time must be positive")
        if not (0.0 < self.cfl < 1.0):
            raise ValueError("cfl must lie in (0, 1)")
        for lo, hi in self.boundary_pairs:
            if not (self.flux.a <= lo <= self.flux.b and self.flux.a <= hi <= self.flux.b):
                raise ValueError("boundary states must lie in [a, b]")
        if self.smoothing_width is not None and self.smoothing_width <= 0:
            raise ValueError("smoothing_width must be positive")

    @property
    def boundary_pairs(self) -> tuple[tuple[float, float], ...]:
        d = self.flux.d
        b = self.boundary
        if isinstance(b, (int, float)):
            return tuple((float(b), float(b)) for _ in range(d))
        pairs = []
        for item in b:
            if isinstance(item, (int, float)):
                pairs.append((float(item), float(item)))
            else:
                lo, hi = item
                pairs.append((float(lo), float(hi)))
        if len(pairs) != d:
            raise ValueError("need one boundary entry per axis")
        return tuple(pairs)

    @property
    def eps_smoothing(self) -> float:
        return self.epsilon if self.smoothing_width is None else self.smoothing_width


@dataclass(frozen=True)
class Trajectory:
    grid: Grid
    times: tuple[float, ...]
    states: np.ndarray  # (n_times, *counts)
    manifest: dict

    def field(self, i: int) -> Field:
        return Field(self.grid, self.states[i], self.times[i])

    @property
    def final(self) -> Field:
        return self.field(len(self.times) - 1)


def cfl_timestep(config: RunConfig, grid: Grid, speed: float) -> float:
    """dt = cfl * min(dx_min / (2 d max(speed, floor)), dx_min^2 / (2 d eps))."""
    dx_min = min(grid.dx)
    d = grid.d
    conv = dx_min / (2.0 * d * max(speed, CFL_SPEED_FLOOR))
    diff = dx_min * dx_min / (2.0 * d * config.epsilon)
    return config.cfl * min(conv, diff)


def grid_speed_bound(config: RunConfig, grid: Grid, n_lambda: int = 65, max_faces: int = 512) -> float:
    """Max smoothed wave speed over (subsampled) face positions and a state
    grid; this is the bound the time step is derived from."""
    model = config.flux
    lam = np.linspace(model.a, model.b, n_lambda)
    worst = 0.0
    for axis in range(grid.d):
        pts = grid.interior_face_points(axis).reshape(-1, grid.d)
        if pts.shape[0] > max_faces:
            idx = np.unique(np.linspace(0, pts.shape[0] - 1, max_faces).astype(int))
            pts = pts[idx]
        dF = model.component_lambda_derivative_smoothed(
            axis, pts[:, None, :], lam[None, :], config.eps_smoothing, config.profile
        )
        worst = max(worst, float(np.abs(dF).max()))
    return worst


# ---------------------------------------------------------------------------
# face caches: geometry and the polynomial fast path are fixed per run


class _FaceFlux:
    """Smoothed flux and wave speed of one axis component on the interior
    faces, with the spatial factors precomputed."""

    N_SPEED_STATES = 5

    def __init__(self, model: PiecewiseFlux, axis: int, pts: np.ndarray, eps: float, profile: SmoothingProfile):
        self.model = model
        self.axis = axis
        self.pts = pts
        if model.interface is None:
            self.wl = None
            self.wr = None
        else:
            self.wl, self.wr = profile.weights(model.interface.offset(pts), eps)
        self.left = self._prep(model.left[axis])
        self.right = self._prep(model.right[axis]) if model.right[axis] is not model.left[axis] else self.left

    def _prep(self, comp):
        if comp.poly_lambda is not None:
            c = np.asarray(comp.poly_lambda)
            dc = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)
            m = comp.x_modulation(self.pts) if comp.x_modulation is not None else None
            return ("poly", c, dc, m)
        return ("generic", comp)

    def _eval(self, prep, u, deriv: bool):
        if prep[0] == "poly":
            _, c, dc, m = prep
            v = np.polynomial.polynomial.polyval(u, dc if deriv else c)
            return v if m is None else m * v
        comp = prep[1]
        fn = comp.lambda_derivative if deriv else comp.value
        return fn(self.pts, u)

    def value(self, u):
        if self.wl is None:
            return self._eval(self.left, u, False)
        return self.wl * self._eval(self.left, u, False) + self.wr * self._eval(self.right, u, False)

    def lambda_derivative(self, u):
        if self.wl is None:
            return self._eval(self.left, u, True)
        return self.wl * self._eval(self.left, u, True) + self.wr * self._eval(self.right, u, True)

    def wave_speed(self, ul, ur):
        """Rusanov coefficient: max |dF/du| over states sampled between the
        face neighbors (endpoints included)."""
        alpha = None
        for frac in np.linspace(0.0, 1.0, self.N_SPEED_STATES):
            s = ul + (ur - ul) * frac
            a = np.abs(self.lambda_derivative(s))
            alpha = a if alpha is None else np.maximum(alpha, a)
        return alpha


def _face_caches(model, grid, eps, profile):
    return [_FaceFlux(model, k, grid.interior_face_points(k), eps, profile) for k in range(grid.d)]


def _axslice(ndim, axis, sl):
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def _advance(values: np.ndarray, config: RunConfig, grid: Grid, dt: float, faces) -> np.ndarray:
    d = grid.d
    eps = config.epsilon
    interior = tuple(slice(1, -1) for _ in range(d))
    acc = np.zeros(tuple(n - 2 for n in grid.counts))
    alpha_max = 0.0
    for k in range(d):
        dx = grid.dx[k]
        ul = values[_axslice(d, k, slice(None, -1))]
        ur = values[_axslice(d, k, slice(1, None))]
        ff = faces[k]
        alpha = ff.wave_speed(ul, ur)
        alpha_max = max(alpha_max, float(alpha.max()))
        fhat = 0.5 * (ff.value(ul) + ff.value(ur)) - 0.5 * alpha * (ur - ul)
        div = (fhat[_axslice(d, k, slice(1, None))] - fhat[_axslice(d, k, slice(None, -1))]) / dx
        lap = (
            values[_axslice(d, k, slice(2, None))]
            - 2.0 * values[_axslice(d, k, slice(1, -1))]
            + values[_axslice(d, k, slice(None, -2))]
        ) / (dx * dx)
        shrink = tuple(slice(1, -1) if m != k else slice(None) for m in range(d))
        acc += -div[shrink] + eps * lap[shrink]

    # the step must respect the same bound the run derived dt from
    dx_min = min(grid.dx)
    limit = config.cfl * min(
        dx_min / (2.0 * d * max(alpha_max, CFL_SPEED_FLOOR)),
        dx_min * dx_min / (2.0 * d * eps),
    )
    if dt > limit * (1.0 + 1e-9):
        raise ValueError(f"time step {dt:.3e} violates the CFL bound {limit:.3e} (wave speed {alpha_max:.3e})")

    out = values.copy()
    out[interior] = values[interior] + dt * acc
    _pin_boundary(out, config.boundary_pairs)
    return out


def _pin_boundary(values: np.ndarray, pairs):
    d = values.ndim
    for k in range(d):
        values[_axslice(d, k, 0)] = pairs[k][0]
        values[_axslice(d, k, -1)] = pairs[k][1]


def step(field: Field, config: RunConfig, dt: float) -> Field:
    """Single explicit update; refuses time steps above the CFL bound."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = cfl_timestep(config, field.grid, grid_speed_bound(config, field.grid))
    if dt > limit * (1.0 + 1e-9):
        raise ValueError(f"dt {dt:.6g} exceeds the CFL bound {limit:.6g}")
    faces = _face_caches(config.flux, field.grid, config.eps_smoothing, config.profile)
    new = _advance(field.values, config, field.grid, dt, faces)
    return Field(field.grid, new, field.time + dt)


def _normalize_output_times(config: RunConfig) -> list[float]:
    T = config.final_time
    if config.output_times is None:
        times = list(np.linspace(0.0, T, 9))
    else:
        times = [float(t) for t in config.output_times]
        if any(t < 0 or t > T * (1 + 1e-12) for t in times):
            raise ValueError("output times must lie in [0, final_time]")
        times = sorted(set(times) | {0.0, T})
    return times


def run(u0: Field, config: RunConfig) -> Trajectory:
    """Advance u0 to final_time, recording the state at the requested output
    times (t = 0 and T always included).  Aborts on non-finite values."""
    grid = u0.grid
    if grid.d != config.flux.d:
        raise ValueError("grid and flux dimension mismatch")
    t0 = time.perf_counter()
    speed = grid_speed_bound(config, grid)
    dt_base = cfl_timestep(config, grid, speed)
    faces = _face_caches(config.flux, grid, config.eps_smoothing, config.profile)
    out_times = _normalize_output_times(config)

    values = np.array(u0.values, dtype=float, copy=True)
    recorded = [values.copy()]
    t = 0.0
    n_steps = 0
    for target in out_times[1:]:
        while t < target - 1e-13:
            dt = min(dt_base, target - t)
            values = _advance(values, config, grid, dt, faces)
            t += dt
            n_steps += 1
            if not np.isfinite(values).all():
                raise RuntimeError(f"non-finite solver state at t = {t:.6g}")
        recorded.append(values.copy())
    manifest = {
        "flux": config.flux.name or "custom",
        "epsilon": config.epsilon,
        "smoothing_width": config.eps_smoothing,
        "final_time": config.final_time,
        "cfl": config.cfl,
        "boundary": [list(p) for p in config.boundary_pairs],
        "grid": {"lows": list(grid.lows), "highs": list(grid.highs), "counts": list(grid.counts)},
        "speed_bound": speed,
        "dt_base": dt_base,
        "n_steps": n_steps,
        "output_times": out_times,
        "wall_time_s": time.perf_counter() - t0,
    }
    return Trajectory(grid=grid, times=tuple(out_times), states=np.stack(recorded), manifest=manifest)


@dataclass(frozen=True)
class MaxPrincipleReport:
    passed: bool
    min_value: float
    max_value: float
    tol: float
    witness: dict | None


def max_principle_check(trajectory: Trajectory, a: float, b: float, tol: float = 1e-10) -> MaxPrincipleReport:
    lo = float(trajectory.states.min())
    hi = float(trajectory.states.max())
    passed = lo >= a - tol and hi <= b + tol
    witness = None
    if not passed:
        idx = np.unravel_index(
            np.argmin(trajectory.states) if lo < a - tol else np.argmax(trajectory.states),
            trajectory.states.shape,
        )
        witness = {"time": trajectory.times[idx[0]], "cell": tuple(int(i) for i in idx[1:])}
    return MaxPrincipleReport(passed=bool(passed), min_value=lo, max_value=hi, tol=tol, witness=witness)
