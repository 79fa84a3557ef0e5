"""Admissibility verification: interface traces, Kruzhkov-type entropy
residuals (with the interface jump term), the transformed-coordinate variant,
the Kato inequality for solution pairs, L1 contraction and cone-of-dependence
checks.

All residuals are evaluated as space-time quadratures over recorded
trajectories: midpoint rule in space (cell centers), trapezoid in time.  A
residual is acceptable when it is bounded below by -tol with tol scaled by
the C1 size of the test function, so that shrinking bumps cannot pass by
smallness alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flux import PiecewiseFlux
from .geometry import Cone, Interface, flatten_model, transformed_normal_flux
from .solver import Field, Trajectory

BUMP_SLOPE_MAX = 8.0 / (3.0 * math.sqrt(3.0))  # max |d/ds (1-s^2)^2|
BUMP_MASS = 16.0 / 15.0  # integral of (1-s^2)^2 over [-1, 1]


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, -1.0, 1.0)
    w = 1.0 - s * s
    return w * w


def _bump_derivative(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, -1.0, 1.0)
    return -4.0 * s * (1.0 - s * s)


@dataclass(frozen=True)
class TestFunction:
    """Nonnegative tensor-product quartic bump

        phi(t, x) = B((t-t0)/r_t) * prod_k B((x_k-c_k)/r_k),  B(s) = (1-s^2)^2,

    compactly supported and C1; the exact C1 norm is available in closed form.
    """

    time_center: float
    time_radius: float
    space_center: tuple[float, ...]
    space_radius: tuple[float, ...]
    label: str = "phi"

    def __post_init__(self):
        if self.time_radius <= 0 or any(r <= 0 for r in self.space_radius):
            raise ValueError("bump radii must be positive")
        if len(self.space_center) != len(self.space_radius):
            raise ValueError("space center and radius dimension mismatch")

    @property
    def d(self) -> int:
        return len(self.space_center)

    def _space_factors(self, x: np.ndarray) -> list[np.ndarray]:
        return [
            _bump((x[..., k] - self.space_center[k]) / self.space_radius[k])
            for k in range(self.d)
        ]

    def value(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = _bump((np.asarray(t, dtype=float) - self.time_center) / self.time_radius)
        for f in self._space_factors(x):
            out = out * f
        return out

    def time_derivative(self, t, x) -> np.ndarray:
        s = (np.asarray(t, dtype=float) - self.time_center) / self.time_radius
        out = _bump_derivative(s) / self.time_radius
        for f in self._space_factors(np.asarray(x, dtype=float)):
            out = out * f
        return out

    def gradient(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        bt = _bump((np.asarray(t, dtype=float) - self.time_center) / self.time_radius)
        factors = self._space_factors(x)
        cols = []
        for k in range(self.d):
            s = (x[..., k] - self.space_center[k]) / self.space_radius[k]
            col = bt * _bump_derivative(s) / self.space_radius[k]
            for m, f in enumerate(factors):
                if m != k:
                    col = col * f
            cols.append(col)
        return np.stack(cols, axis=-1)

    @property
    def c1_norm(self) -> float:
        """sup|phi| + sum of sup|partial phi| (attained, not estimated)."""
        return float(1.0 + BUMP_SLOPE_MAX * (1.0 / self.time_radius + sum(1.0 / r for r in self.space_radius)))

    def validate(self, box, final_time: float):
        """Support must sit inside the spatial box and end by final_time."""
        problems = []
        if self.time_center + self.time_radius > final_time + 1e-12:
            problems.append(f"time support ends at {self.time_center + self.time_radius} > T={final_time}")
        for k, (lo, hi) in enumerate(zip(box.lows, box.highs)):
            if self.space_center[k] - self.space_radius[k] < lo - 1e-12 or self.space_center[k] + self.space_radius[k] > hi + 1e-12:
                problems.append(f"axis {k} support outside [{lo}, {hi}]")
        if problems:
            raise ValueError(f"test function {self.label}: " + "; ".join(problems))


def lambda_battery(a: float, b: float) -> np.ndarray:
    """Endpoint states plus the nine interior tenths of [a, b]."""
    return np.concatenate([[a], a + (b - a) * np.arange(1, 10) / 10.0, [b]])


def bump_battery(box, final_time: float, count: int = 20) -> list[TestFunction]:
    """Deterministic battery: one large bump centered in space-time (its
    support spans [0, T]), the rest scattered on a Halton lattice."""
    from scipy.stats import qmc

    d = box.d
    widths = box.widths
    phis = [
        TestFunction(
            time_center=final_time / 2.0,
            time_radius=final_time / 2.0,
            space_center=box.center,
            space_radius=tuple(0.45 * w for w in widths),
            label="phi00",
        )
    ]
    if count > 1:
        rt = 0.3 * final_time
        radii = tuple(0.25 * w for w in widths)
        sampler = qmc.Halton(d=1 + d, scramble=False)
        pts = sampler.random(count - 1)
        for i, p in enumerate(pts):
            tc = p[0] * (final_time - rt)
            center = tuple(
                lo + r + p[1 + k] * (w - 2 * r)
                for k, (lo, w, r) in enumerate(zip(box.lows, widths, radii))
            )
            phis.append(
                TestFunction(
                    time_center=float(tc),
                    time_radius=rt,
                    space_center=center,
                    space_radius=radii,
                    label=f"phi{i + 1:02d}",
                )
            )
    return phis


# ---------------------------------------------------------------------------
# interface traces


@dataclass(frozen=True)
class TraceField:
    """One-sided interface limits per recorded time, estimated by linear
    extrapolation from the 2nd and 3rd cells on each side of the interface."""

    times: tuple[float, ...]
    tangential_points: np.ndarray  # (m, d-1)
    surface_points: np.ndarray  # (m, d)
    left: np.ndarray  # (n_times, m)
    right: np.ndarray
    tangential_weight: float
    stencil: dict

    @property
    def averaged(self) -> np.ndarray:
        return 0.5 * (self.left + self.right)


def interface_trace(trajectory: Trajectory, interface: Interface, eps: float | None = None,
                    bounds: tuple[float, float] | None = None) -> TraceField:
    """Extract p_u along the interface.

    Requires the layer to be resolved: at least 4 cells (in total) within
    normal distance 4*eps of the interface on every tangential row.
    """
    grid = trajectory.grid
    j = interface.axis
    if eps is None:
        eps = trajectory.manifest.get("smoothing_width")
    if eps is None:
        raise ValueError("interface_trace needs the smoothing width (not found in the trajectory manifest)")

    centers_j = grid.centers(j)
    nj = grid.counts[j]
    tang_axes = [k for k in range(grid.d) if k != j]
    if tang_axes:
        mesh = np.meshgrid(*[grid.centers(k) for k in tang_axes], indexing="ij")
        tang_pts = np.stack(mesh, axis=-1).reshape(-1, len(tang_axes))
    else:
        tang_pts = np.zeros((1, 0))
    zeta_rows = np.asarray(interface.zeta(tang_pts), dtype=float).reshape(-1)
    m = tang_pts.shape[0]

    offsets = centers_j[None, :] - zeta_rows[:, None]  # (m, nj)
    resolved = (np.abs(offsets) <= 4.0 * eps).sum(axis=1)
    if resolved.min() < 4:
        raise ValueError(
            f"interface not resolved: only {int(resolved.min())} cells within 4*eps={4 * eps:.3g} "
            f"of the interface (need 4); refine the grid or enlarge eps"
        )
    split = np.searchsorted(centers_j, zeta_rows)  # first cell on the right side
    if split.min() < 3 or split.max() > nj - 3:
        raise ValueError("interface too close to the domain boundary for trace extraction")

    # states with the normal axis last: (n_times, m, nj)
    vn = np.moveaxis(trajectory.states, 1 + j, -1).reshape(len(trajectory.times), m, nj)
    rows = np.arange(m)

    def extrapolate(i_near, i_far):
        o1 = offsets[rows, i_near][None, :]
        o2 = offsets[rows, i_far][None, :]
        v1 = vn[:, rows, i_near]
        v2 = vn[:, rows, i_far]
        return v1 - o1 * (v2 - v1) / (o2 - o1)

    left = extrapolate(split - 2, split - 3)
    right = extrapolate(split + 1, split + 2)
    if bounds is not None:
        left = np.clip(left, bounds[0], bounds[1])
        right = np.clip(right, bounds[0], bounds[1])

    surface = np.insert(tang_pts, j, zeta_rows, axis=-1)
    weight = float(np.prod([grid.dx[k] for k in tang_axes])) if tang_axes else 1.0
    return TraceField(
        times=trajectory.times,
        tangential_points=tang_pts,
        surface_points=surface,
        left=left,
        right=right,
        tangential_weight=weight,
        stencil={"cells_per_side": (2, 3), "eps": float(eps), "clamped": bounds is not None},
    )


# ---------------------------------------------------------------------------
# residual quadratures


def _time_weights(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    w = np.empty_like(t)
    w[0] = 0.5 * (t[1] - t[0])
    w[-1] = 0.5 * (t[-1] - t[-2])
    w[1:-1] = 0.5 * (t[2:] - t[:-2])
    return w


class ResidualWorkspace:
    """Per-trajectory tables shared across a (lambda, phi) battery.

    Holds the state stack, the sharp flux evaluated at the solution, the
    interface traces, and a one-entry cache of test-function tables so a
    battery that loops phi outermost never re-evaluates phi.
    """

    def __init__(self, trajectory: Trajectory, model: PiecewiseFlux, traces: TraceField | None = None,
                 eps: float | None = None):
        if trajectory.grid.d != model.d:
            raise ValueError("trajectory and model dimension mismatch")
        if abs(trajectory.times[0]) > 1e-14:
            raise ValueError("residuals need the initial state: trajectory must start at t = 0")
        self.trajectory = trajectory
        self.model = model
        grid = trajectory.grid
        self.times = np.asarray(trajectory.times)
        self.tw = _time_weights(self.times)
        self.points = grid.points().reshape(-1, grid.d)
        self.cell_volume = grid.cell_volume
        nt = len(self.times)
        self.states = trajectory.states.reshape(nt, -1)
        self.flux_u = np.stack([model.evaluate(self.points, self.states[i]) for i in range(nt)])
        self.eps = eps if eps is not None else trajectory.manifest.get("smoothing_width")
        self._traces = traces
        self._jump_left = None
        self._jump_right = None
        self._lam_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self._phi_cache: tuple[int, dict] | None = None

    @property
    def traces(self) -> TraceField | None:
        if self._traces is None and self.model.interface is not None:
            self._traces = interface_trace(
                self.trajectory, self.model.interface, eps=self.eps,
                bounds=(self.model.a, self.model.b),
            )
        return self._traces

    def _lam_tables(self, lam: float):
        key = float(lam)
        if key not in self._lam_cache:
            flux_lam = self.model.evaluate(self.points, np.full(self.points.shape[0], key))
            div_lam = self.model.smooth_divergence_at_state(self.points, np.full(self.points.shape[0], key))
            self._lam_cache[key] = (flux_lam, div_lam)
        return self._lam_cache[key]

    def _phi_tables(self, phi) -> dict:
        if self._phi_cache is not None and self._phi_cache[0] == id(phi):
            return self._phi_cache[1]
        vals = np.stack([phi.value(t, self.points) for t in self.times])
        dts = np.stack([phi.time_derivative(t, self.points) for t in self.times])
        grads = np.stack([phi.gradient(t, self.points) for t in self.times])
        tables = {"vals": vals, "dts": dts, "grads": grads}
        tr = self.traces
        if tr is not None:
            tables["surf_vals"] = np.stack([phi.value(t, tr.surface_points) for t in self.times])
        self._phi_cache = (id(phi), tables)
        return tables

    def _interface_jump(self, lam: float) -> np.ndarray:
        """(F_R - F_L)(x, lam) on the interface, in transformed normal form."""
        if self._jump_left is None:
            itf = self.model.interface
            self._jump_left = transformed_normal_flux(self.model, itf, "left")
            self._jump_right = transformed_normal_flux(self.model, itf, "right")
        pts = self.traces.surface_points
        lam_arr = np.full(pts.shape[0], float(lam))
        return np.asarray(
            self._jump_right.value(pts, lam_arr) - self._jump_left.value(pts, lam_arr), dtype=float
        )

    def kruzhkov(self, lam: float, phi) -> float:
        """E(lam, phi); admissibility asks E >= -tol."""
        if not (self.model.a <= lam <= self.model.b):
            raise ValueError(f"lambda = {lam} outside [{self.model.a}, {self.model.b}]")
        tables = self._phi_tables(phi)
        flux_lam, div_lam = self._lam_tables(lam)
        diff = self.states - lam
        sgn = np.sign(diff)

        term_time = np.einsum("t,tc,tc->", self.tw, np.abs(diff), tables["dts"])
        conv = ((self.flux_u - flux_lam[None]) * tables["grads"]).sum(axis=-1)
        term_conv = np.einsum("t,tc,tc->", self.tw, sgn, conv)
        term_div = np.einsum("t,tc,c,tc->", self.tw, sgn, div_lam, tables["vals"])
        total = self.cell_volume * (term_time + term_conv - term_div)

        tr = self.traces
        if tr is not None:
            jump = self._interface_jump(lam)
            sgn_p = np.sign(tr.averaged - lam)
            delta = np.einsum("t,tm,m,tm->", self.tw, sgn_p, jump, tables["surf_vals"])
            total -= tr.tangential_weight * delta

        init = np.abs(self.states[0] - lam) @ tables["vals"][0]
        total += self.cell_volume * init
        return float(total)


def kruzhkov_residual(trajectory: Trajectory, model: PiecewiseFlux, lam: float, phi,
                      workspace: ResidualWorkspace | None = None,
                      traces: TraceField | None = None) -> float:
    ws = workspace if workspace is not None else ResidualWorkspace(trajectory, model, traces=traces)
    return ws.kruzhkov(lam, phi)


def transformed_entropy_residual(trajectory: Trajectory, model: PiecewiseFlux, lam: float, phi,
                                 workspace: ResidualWorkspace | None = None,
                                 traces: TraceField | None = None) -> float:
    """Entropy residual in flattened coordinates: the trajectory must live on
    a grid where the interface is the hyperplane x_j = 0; the model is
    flattened here (transformed normal flux per side, flat interface)."""
    if workspace is not None:
        return workspace.kruzhkov(lam, phi)
    flat = flatten_model(model)
    return kruzhkov_residual(trajectory, flat, lam, phi, traces=traces)


def transformed_workspace(trajectory: Trajectory, model: PiecewiseFlux,
                          traces: TraceField | None = None) -> ResidualWorkspace:
    return ResidualWorkspace(trajectory, flatten_model(model), traces=traces)


def kato_residual(u1: Trajectory, u2: Trajectory, model: PiecewiseFlux, phi,
                  eps: float | None = None) -> float:
    """Kato form for two solutions of the same (smoothed) equation; the
    interface terms cancel pairwise, so no trace term appears."""
    if u1.grid != u2.grid:
        raise ValueError("kato residual needs a shared grid")
    if len(u1.times) != len(u2.times) or not np.allclose(u1.times, u2.times):
        raise ValueError("kato residual needs matching output times")
    if eps is None:
        eps = u1.manifest.get("smoothing_width") or u2.manifest.get("smoothing_width")
    if eps is None:
        if model.interface is not None:
            raise ValueError("kato residual needs the smoothing width for an interface model")
        eps = 1.0

    grid = u1.grid
    pts = grid.points().reshape(-1, grid.d)
    times = np.asarray(u1.times)
    tw = _time_weights(times)
    nt = len(times)
    s1 = u1.states.reshape(nt, -1)
    s2 = u2.states.reshape(nt, -1)

    total = 0.0
    for i in range(nt):
        diff = s1[i] - s2[i]
        sgn = np.sign(diff)
        f1 = model.evaluate_smoothed(pts, s1[i], eps)
        f2 = model.evaluate_smoothed(pts, s2[i], eps)
        d1 = model.smooth_divergence_at_state(pts, s1[i])
        d2 = model.smooth_divergence_at_state(pts, s2[i])
        dt_phi = phi.time_derivative(times[i], pts)
        grad_phi = phi.gradient(times[i], pts)
        val_phi = phi.value(times[i], pts)
        contrib = (
            np.abs(diff) @ dt_phi
            + (sgn * ((f1 - f2) * grad_phi).sum(axis=-1)).sum()
            - (sgn * (d1 - d2) * val_phi).sum()
        )
        total += tw[i] * contrib
    total += np.abs(s1[0] - s2[0]) @ phi.value(times[0], pts)
    return float(total * grid.cell_volume)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EntropyEntry:
    lam: float | None
    phi_id: str
    residual: float
    tol: float
    passed: bool


@dataclass(frozen=True)
class EntropyReport:
    entries: tuple[EntropyEntry, ...]
    min_residual: float
    worst: tuple[float | None, str]
    passed: bool

    def to_json(self) -> dict:
        return {
            "entries": [
                {"lambda": e.lam, "phi_id": e.phi_id, "residual": e.residual, "tol": e.tol, "pass": e.passed}
                for e in self.entries
            ],
            "summary": {
                "min_residual": self.min_residual,
                "worst_lambda": self.worst[0],
                "worst_phi": self.worst[1],
                "pass": self.passed,
                "count": len(self.entries),
            },
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _assemble_report(rows: list[EntropyEntry]) -> EntropyReport:
    worst_row = min(rows, key=lambda e: e.residual)
    return EntropyReport(
        entries=tuple(rows),
        min_residual=worst_row.residual,
        worst=(worst_row.lam, worst_row.phi_id),
        passed=all(e.passed for e in rows),
    )


def entropy_battery(trajectory: Trajectory, model: PiecewiseFlux,
                    lambdas: Sequence[float] | None = None,
                    phis: Sequence[TestFunction] | None = None,
                    tol_factor: float = 1e-3,
                    transformed: bool = False) -> EntropyReport:
    """Evaluate the admissibility residual over the full battery.

    tol per pair = tol_factor * ||phi||_C1 * |domain| (Design note: scaling
    with the test function bars tiny bumps from passing trivially).
    """
    work_model = flatten_model(model) if transformed else model
    ws = ResidualWorkspace(trajectory, work_model)
    box = trajectory.grid.box
    if lambdas is None:
        lambdas = lambda_battery(model.a, model.b)
    if phis is None:
        phis = bump_battery(box, trajectory.times[-1])
    volume = box.volume
    rows = []
    for phi in phis:
        phi.validate(box, trajectory.times[-1])
        tol = float(tol_factor * phi.c1_norm * volume)
        for lam in lambdas:
            r = ws.kruzhkov(float(lam), phi)
            rows.append(EntropyEntry(float(lam), phi.label, r, tol, bool(r >= -tol)))
    return _assemble_report(rows)


def kato_battery(u1: Trajectory, u2: Trajectory, model: PiecewiseFlux,
                 phis: Sequence[TestFunction] | None = None,
                 tol_factor: float = 1e-3,
                 eps: float | None = None) -> EntropyReport:
    box = u1.grid.box
    if phis is None:
        phis = bump_battery(box, u1.times[-1])
    volume = box.volume
    rows = []
    for phi in phis:
        phi.validate(box, u1.times[-1])
        tol = float(tol_factor * phi.c1_norm * volume)
        r = kato_residual(u1, u2, model, phi, eps=eps)
        rows.append(EntropyEntry(None, phi.label, r, tol, bool(r >= -tol)))
    return _assemble_report(rows)


# ---------------------------------------------------------------------------
# distances, contraction, cones


def l1_distance(u1: Field, u2: Field) -> float:
    if u1.grid != u2.grid:
        raise ValueError("l1_distance needs a shared grid")
    return float(np.abs(u1.values - u2.values).sum() * u1.grid.cell_volume)


@dataclass(frozen=True)
class ContractionReport:
    entries: tuple[dict, ...]
    worst_ratio: float
    passed: bool


def contraction_check(pairs: Sequence[tuple[Trajectory, Trajectory]], slack: float = 0.05) -> ContractionReport:
    """L1 distance at every recorded time must not exceed (1 + slack) times
    the initial distance.  Identical data passes by convention (0/0)."""
    entries = []
    worst = 0.0
    for idx, (ta, tb) in enumerate(pairs):
        if ta.grid != tb.grid or len(ta.times) != len(tb.times):
            raise ValueError(f"pair {idx}: trajectories not comparable")
        d0 = l1_distance(ta.field(0), tb.field(0))
        for i, t in enumerate(ta.times):
            dt_ = l1_distance(ta.field(i), tb.field(i))
            if d0 <= 1e-14:
                ratio = 0.0 if dt_ <= 1e-12 else math.inf
            else:
                ratio = dt_ / d0
            worst = max(worst, ratio)
            entries.append({"pair": idx, "time": float(t), "initial": d0, "distance": dt_, "ratio": ratio})
    return ContractionReport(entries=tuple(entries), worst_ratio=worst, passed=worst <= 1.0 + slack)


@dataclass(frozen=True)
class ConeLocalityReport:
    kappa: float
    tol: float
    passed: bool
    per_time: tuple[dict, ...]


def cone_locality_check(ta: Trajectory, tb: Trajectory, cone: Cone, tol: float = 1e-2) -> ConeLocalityReport:
    """In-cone L1 difference at each recorded time; kappa is the worst.

    The strict cone property holds only in the vanishing-viscosity limit, so
    the check passes on a parabolic-leak tolerance rather than exactly.
    """
    if ta.grid != tb.grid or len(ta.times) != len(tb.times):
        raise ValueError("cone check needs comparable trajectories")
    grid = ta.grid
    pts = grid.points().reshape(-1, grid.d)
    dist = np.linalg.norm(pts - np.asarray(cone.center, dtype=float), axis=-1)
    rows = []
    kappa = 0.0
    for i, t in enumerate(ta.times):
        radius = cone.section_radius(t)
        if radius <= 0:
            break
        mask = dist <= radius
        diff = np.abs(ta.states[i].reshape(-1) - tb.states[i].reshape(-1))
        l1 = float(diff[mask].sum() * grid.cell_volume)
        kappa = max(kappa, l1)
        rows.append({"time": float(t), "section_radius": float(radius), "l1": l1})
    return ConeLocalityReport(kappa=kappa, tol=tol, passed=kappa <= tol, per_time=tuple(rows))
