"""Vanishing-viscosity germ study: a countable dense family of dyadic step
data, viscous runs along a fixed decreasing epsilon sequence, numerical
diagonal subsequence selection, and completeness/stability reports.

Grid resolution is slaved to the viscosity (dx <= eps/4, power-of-two cell
counts) so every run resolves its own layer; endpoints are compared on the
grid of the finest run.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .entropy import l1_distance
from .flux import PiecewiseFlux
from .geometry import Box, Cone, as_points, speed_bound
from .solver import Field, Grid, RunConfig, run
from . import storage

DEFAULT_CELL_BUDGET = 32768
MEMBER_CAP = 100000


def dyadic_values(a: float, b: float, level: int) -> np.ndarray:
    return a + (b - a) * np.arange(2 ** level + 1) / (2 ** level)


def member_count(level: int, d: int) -> int:
    return (2 ** level + 1) ** ((2 ** level) ** d)


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant datum on the dyadic partition of a box: 2^level
    pieces per axis, values from the dyadic lattice in [a, b]."""

    box: Box
    level: int
    values: tuple[float, ...]  # row-major over pieces
    label: str = "step"

    def __post_init__(self):
        if len(self.values) != (2 ** self.level) ** self.box.d:
            raise ValueError("value count does not match the dyadic partition")

    @property
    def pieces_per_axis(self) -> int:
        return 2 ** self.level

    def value_array(self) -> np.ndarray:
        p = self.pieces_per_axis
        return np.asarray(self.values).reshape((p,) * self.box.d)

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.box.d)
        p = self.pieces_per_axis
        idx = []
        for k in range(self.box.d):
            w = self.box.widths[k] / p
            i = np.floor((pts[..., k] - self.box.lows[k]) / w).astype(int)
            idx.append(np.clip(i, 0, p - 1))
        return self.value_array()[tuple(idx)]

    def refine(self) -> "StepFunction":
        """Same function represented one level finer (each piece split)."""
        arr = self.value_array()
        for axis in range(self.box.d):
            arr = np.repeat(arr, 2, axis=axis)
        return StepFunction(self.box, self.level + 1, tuple(float(v) for v in arr.reshape(-1)),
                            label=self.label + "+")


@dataclass(frozen=True)
class DenseFamily:
    """All dyadic step data at one level.  Members are materialized only up
    to a cap; projection works at any level."""

    box: Box
    a: float
    b: float
    level: int
    count: int
    members: tuple[StepFunction, ...] | None

    @property
    def enumerable(self) -> bool:
        return self.members is not None

    def project(self, u0: Field) -> StepFunction:
        """The member closest in the piecewise sense: cell means per dyadic
        piece, snapped to the nearest dyadic value (ties to the lower one)."""
        grid = u0.grid
        p = 2 ** self.level
        counts = []
        sums = []
        pts = grid.points().reshape(-1, grid.d)
        flat = u0.values.reshape(-1)
        idx = np.zeros(pts.shape[0], dtype=int)
        for k in range(grid.d):
            w = self.box.widths[k] / p
            i = np.clip(np.floor((pts[:, k] - self.box.lows[k]) / w).astype(int), 0, p - 1)
            idx = idx * p + i
        n_pieces = p ** grid.d
        sums = np.bincount(idx, weights=flat, minlength=n_pieces)
        counts = np.bincount(idx, minlength=n_pieces)
        if (counts == 0).any():
            raise ValueError("comparison grid too coarse for this family level")
        means = sums / counts
        vals = dyadic_values(self.a, self.b, self.level)
        chosen = vals[np.argmin(np.abs(means[:, None] - vals[None, :]), axis=1)]
        key = "".join(str(int(round((v - self.a) / (self.b - self.a) * p))) for v in chosen)
        return StepFunction(self.box, self.level, tuple(float(v) for v in chosen),
                            label=f"L{self.level}-{key}")


def build_dense_family(level: int, a: float, b: float, box: Box, member_cap: int = MEMBER_CAP) -> DenseFamily:
    if level < 0:
        raise ValueError("level must be >= 0")
    count = member_count(level, box.d)
    members = None
    if count <= member_cap:
        vals = dyadic_values(a, b, level)
        pieces = (2 ** level) ** box.d
        members = []
        for i, combo in enumerate(itertools.product(range(len(vals)), repeat=pieces)):
            key = "".join(str(c) for c in combo)
            members.append(StepFunction(box, level, tuple(float(vals[c]) for c in combo),
                                        label=f"L{level}-{key}"))
        members = tuple(members)
    return DenseFamily(box=box, a=a, b=b, level=level, count=count, members=members)


# ---------------------------------------------------------------------------
# epsilon sequences


def grid_for_epsilon(box: Box, eps: float, cell_budget: int = DEFAULT_CELL_BUDGET) -> Grid:
    """Power-of-two counts with dx <= eps/4 on every axis."""
    counts = []
    for w in box.widths:
        n = 2 ** max(2, math.ceil(math.log2(4.0 * w / eps)))
        counts.append(n)
    total = int(np.prod(counts))
    if total > cell_budget:
        raise ValueError(
            f"eps = {eps} needs {total} cells, above the cell budget {cell_budget}"
        )
    return Grid(box.lows, box.highs, tuple(counts))


@dataclass(frozen=True)
class GermRecord:
    member_id: str
    epsilons: tuple[float, ...]
    initial: Field  # on the comparison grid
    endpoints: tuple[Field, ...]  # u_eps(T) per eps, on the comparison grid
    deltas: tuple[float, ...]  # l1(endpoint[k+1], endpoint[k])
    grid_counts: tuple[tuple[int, ...], ...]


def _interp_to(field_values: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    if src == dst:
        return np.array(field_values, copy=True)
    from scipy.interpolate import RegularGridInterpolator

    axes = [src.centers(k) for k in range(src.d)]
    itp = RegularGridInterpolator(axes, field_values, method="linear",
                                  bounds_error=False, fill_value=None)
    pts = dst.points().reshape(-1, dst.d)
    return itp(pts).reshape(dst.counts)


def _edge_boundary(u0_fn, box: Box):
    center = np.asarray(box.center, dtype=float)
    pairs = []
    for k in range(box.d):
        lo_pt = center.copy()
        hi_pt = center.copy()
        lo_pt[k] = box.lows[k]
        hi_pt[k] = box.highs[k] - 1e-12 * box.widths[k]
        lo_v = float(np.asarray(u0_fn(lo_pt[None, :])).reshape(-1)[0])
        hi_v = float(np.asarray(u0_fn(hi_pt[None, :])).reshape(-1)[0])
        pairs.append((lo_v, hi_v))
    return tuple(pairs)


def run_sequence(u0_fn, epsilons, model: PiecewiseFlux, box: Box, final_time: float,
                 boundary=None, cell_budget: int = DEFAULT_CELL_BUDGET, cfl: float = 0.45,
                 comparison_grid: Grid | None = None, member_id: str = "datum") -> GermRecord:
    """Run the viscous solver for each epsilon and collect endpoints on the
    comparison grid (default: the grid of the finest epsilon)."""
    eps_list = [float(e) for e in epsilons]
    if len(eps_list) < 2:
        raise ValueError("need at least two epsilons")
    if any(e <= 0 for e in eps_list) or any(b <= a for a, b in zip(eps_list[1:], eps_list[:-1])):
        raise ValueError("epsilon sequence must be positive and strictly decreasing")
    if comparison_grid is None:
        comparison_grid = grid_for_epsilon(box, eps_list[-1], cell_budget)
    if boundary is None:
        boundary = _edge_boundary(u0_fn, box)

    endpoints = []
    counts = []
    for eps in eps_list:
        grid = grid_for_epsilon(box, eps, cell_budget)
        config = RunConfig(flux=model, epsilon=eps, final_time=final_time,
                           boundary=boundary, cfl=cfl, output_times=(final_time,))
        u0 = Field(grid, np.asarray(u0_fn(grid.points()), dtype=float), 0.0)
        traj = run(u0, config)
        endpoints.append(Field(comparison_grid, _interp_to(traj.final.values, grid, comparison_grid), final_time))
        counts.append(tuple(grid.counts))
    deltas = tuple(l1_distance(endpoints[k + 1], endpoints[k]) for k in range(len(endpoints) - 1))
    initial = Field(comparison_grid, np.asarray(u0_fn(comparison_grid.points()), dtype=float), 0.0)
    return GermRecord(member_id=member_id, epsilons=tuple(eps_list), initial=initial,
                      endpoints=tuple(endpoints), deltas=deltas, grid_counts=tuple(counts))


# ---------------------------------------------------------------------------
# diagonal selection


@dataclass(frozen=True)
class SelectionResult:
    indices: tuple[int, ...]
    passed: bool
    threshold: float
    steps: tuple[dict, ...]
    failed_member: str | None = None
    failed_step: int | None = None


def diagonal_select(records, threshold: float, n_steps: int | None = None) -> SelectionResult:
    """Numerical diagonal argument: pick strictly increasing delta indices
    k_1 < k_2 < ... with max-over-members delta_k <= threshold * 2^-j at step
    j (and non-increasing along the selection).  Failure is an outcome, not
    an error; the report names the blocking datum."""
    records = list(records)
    if not records:
        raise ValueError("no records")
    n_deltas = len(records[0].deltas)
    if any(len(r.deltas) != n_deltas for r in records):
        raise ValueError("records disagree on the number of deltas")
    if n_deltas < 3:
        raise ValueError("need at least 4 epsilons (3 deltas) per record")
    if n_steps is None:
        n_steps = n_deltas

    table = np.array([r.deltas for r in records])  # (members, deltas)
    worst = table.max(axis=0)
    indices = []
    steps = []
    prev = -1
    prev_delta = math.inf
    for j in range(1, n_steps + 1):
        bound = threshold * 2.0 ** (-j)
        cap = min(bound, prev_delta)
        chosen = None
        for k in range(prev + 1, n_deltas):
            if worst[k] <= cap:
                chosen = k
                break
        if chosen is None:
            candidates = worst[prev + 1:]
            if candidates.size:
                k_best = int(np.argmin(candidates)) + prev + 1
                blocker = records[int(np.argmax(table[:, k_best]))].member_id
            else:
                blocker = records[0].member_id
            steps.append({"step": j, "bound": bound, "index": None, "max_delta": None})
            return SelectionResult(indices=tuple(indices), passed=False, threshold=threshold,
                                   steps=tuple(steps), failed_member=blocker, failed_step=j)
        indices.append(chosen)
        steps.append({"step": j, "bound": bound, "index": chosen, "max_delta": float(worst[chosen])})
        prev = chosen
        prev_delta = worst[chosen]
    return SelectionResult(indices=tuple(indices), passed=True, threshold=threshold, steps=tuple(steps))


# ---------------------------------------------------------------------------
# contraction matrix and stability


@dataclass(frozen=True)
class ContractionMatrix:
    ids: tuple[str, ...]
    data_distances: np.ndarray
    limit_distances: np.ndarray
    ratios: np.ndarray
    cone: Cone | None = None


def _ball_l1(u: Field, v: Field, center, radius: float) -> float:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    dist = np.linalg.norm(u.grid.points() - np.asarray(center), axis=-1)
    mask = dist <= radius
    return float(np.abs(u.values - v.values)[mask].sum() * u.grid.cell_volume)


def contraction_matrix(records, cone: Cone | None = None) -> ContractionMatrix:
    """Pairwise initial and endpoint distances with their ratios.

    On the whole space the endpoint/data ratio is at most 1; a truncated box
    leaks mass through its open boundary at member-dependent rates, so when a
    cone is given the endpoint distance is measured on the cone section at the
    endpoint time and the data distance on the cone base, which is the portion
    of the whole-space inequality the box can certify."""
    records = list(records)
    n = len(records)
    data = np.zeros((n, n))
    limit = np.zeros((n, n))
    if cone is not None:
        t_end = records[0].endpoints[-1].time if records else 0.0
        section = cone.section_radius(t_end)
        if section <= 0:
            raise ValueError("cone section is empty at the endpoint time; shorten the run")
    for i in range(n):
        for j in range(i + 1, n):
            if cone is None:
                dd = l1_distance(records[i].initial, records[j].initial)
                ld = l1_distance(records[i].endpoints[-1], records[j].endpoints[-1])
            else:
                dd = _ball_l1(records[i].initial, records[j].initial, cone.center, cone.radius)
                ld = _ball_l1(records[i].endpoints[-1], records[j].endpoints[-1],
                              cone.center, section)
            data[i, j] = data[j, i] = dd
            limit[i, j] = limit[j, i] = ld
    ratios = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios[off] = np.where(data[off] > 0, limit[off] / np.where(data[off] > 0, data[off], 1.0), np.inf)
    return ContractionMatrix(ids=tuple(r.member_id for r in records),
                             data_distances=data, limit_distances=limit, ratios=ratios,
                             cone=cone)


@dataclass(frozen=True)
class StabilityReport:
    worst_ratio: float
    worst_pair: tuple[str, str] | None
    passed: bool
    pairs: int


def stability_report(matrix: ContractionMatrix, slack: float = 0.05) -> StabilityReport:
    n = len(matrix.ids)
    worst = 0.0
    worst_pair = None
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            if matrix.data_distances[i, j] <= 0:
                continue
            pairs += 1
            r = matrix.ratios[i, j]
            if r > worst:
                worst = float(r)
                worst_pair = (matrix.ids[i], matrix.ids[j])
    return StabilityReport(worst_ratio=worst, worst_pair=worst_pair, passed=worst <= 1.0 + slack, pairs=pairs)


# ---------------------------------------------------------------------------
# the study orchestrator


@dataclass(frozen=True)
class GermEstimate:
    limit: Field
    error_bar: float
    member_id: str
    approx_error: float
    delta_tail: float


def _delta_tail(deltas) -> float:
    last = deltas[-1]
    prev = deltas[-2] if len(deltas) > 1 else 0.0
    if last <= 0:
        return 0.0
    rho = min(last / prev, 0.9) if prev > 0 else 0.0
    return float(last * rho / (1.0 - rho))


@dataclass(frozen=True)
class GermLevelResult:
    level: int
    records: tuple[GermRecord, ...]
    selection: SelectionResult
    matrix: ContractionMatrix
    stability: StabilityReport

    @property
    def passed(self) -> bool:
        return self.selection.passed and self.stability.passed


class GermStudy:
    """Caches one GermRecord per datum so family sweeps, diagonal selection,
    stability matrices and germ_solve reuse each viscous run."""

    def __init__(self, model: PiecewiseFlux, final_time: float, epsilons,
                 box: Box | None = None, cell_budget: int = DEFAULT_CELL_BUDGET,
                 cfl: float = 0.45, threshold: float | None = None):
        self.model = model
        self.box = box if box is not None else model.domain
        self.final_time = float(final_time)
        self.epsilons = tuple(float(e) for e in epsilons)
        self.cell_budget = cell_budget
        self.cfl = cfl
        self.comparison_grid = grid_for_epsilon(self.box, self.epsilons[-1], cell_budget)
        self.threshold = (0.05 * (model.b - model.a) * self.box.volume
                          if threshold is None else float(threshold))
        # contraction is certified on the largest cone the box supports
        circum = float(np.linalg.norm(self.box.widths) / 2.0)
        speed = speed_bound(model, circum, max(abs(model.a), abs(model.b))).value
        inradius = float(self.box.widths.min() / 2.0)
        self.cone = Cone(tuple(float(v) for v in self.box.center), inradius, max(speed, 1e-12))
        if self.cone.section_radius(self.final_time) <= 0:
            raise ValueError(
                f"final time {self.final_time} empties the contraction cone "
                f"(radius {inradius}, speed {speed}); shorten the run or grow the box"
            )
        self._records: dict = {}

    def family(self, level: int) -> DenseFamily:
        return build_dense_family(level, self.model.a, self.model.b, self.box)

    def record_for(self, member: StepFunction) -> GermRecord:
        key = (member.level, member.values)
        if key not in self._records:
            self._records[key] = run_sequence(
                member, self.epsilons, self.model, self.box, self.final_time,
                cell_budget=self.cell_budget, cfl=self.cfl,
                comparison_grid=self.comparison_grid, member_id=member.label,
            )
        return self._records[key]

    def level_result(self, level: int) -> GermLevelResult:
        family = self.family(level)
        if not family.enumerable:
            raise ValueError(f"family level {level} has {family.count} members, too many to enumerate")
        records = tuple(self.record_for(m) for m in family.members)
        selection = diagonal_select(records, self.threshold)
        matrix = contraction_matrix(records, cone=self.cone)
        stability = stability_report(matrix)
        return GermLevelResult(level=level, records=records, selection=selection,
                               matrix=matrix, stability=stability)

    def solve(self, u0: Field, level: int) -> GermEstimate:
        """Limit estimate for arbitrary data: project onto the family, reuse
        that member's sequence, and report the triangle-inequality error bar
        approx_error + delta_tail."""
        if u0.grid != self.comparison_grid:
            raise ValueError("germ_solve data must live on the comparison grid")
        family = self.family(level)
        member = family.project(u0)
        record = self.record_for(member)
        approx = l1_distance(u0, record.initial)
        tail = _delta_tail(record.deltas)
        return GermEstimate(limit=record.endpoints[-1], error_bar=approx + tail,
                            member_id=member.label, approx_error=approx, delta_tail=tail)


def germ_solve(u0: Field, family: DenseFamily, study: GermStudy,
               selection: SelectionResult | None = None) -> GermEstimate:
    del selection  # the estimate always uses the finest recorded endpoint
    return study.solve(u0, family.level)


@dataclass(frozen=True)
class CompletenessReport:
    levels: tuple[GermLevelResult, ...]
    first_failed_level: int | None

    @property
    def passed(self) -> bool:
        return self.first_failed_level is None


def certify_completeness(study: GermStudy, max_level: int = 1) -> CompletenessReport:
    """Level-by-level certification; stops at the first failing level (a
    finite machine certifies up to a level and a budget, nothing more)."""
    results = []
    failed = None
    for level in range(1, max_level + 1):
        try:
            res = study.level_result(level)
        except ValueError:
            failed = level
            break
        results.append(res)
        if not res.passed:
            failed = level
            break
    return CompletenessReport(levels=tuple(results), first_failed_level=failed)


# ---------------------------------------------------------------------------
# persistence


def save_record(record: GermRecord, dirpath):
    storage.ensure_dir(dirpath)
    files = {}
    storage.write_field_csv(os.path.join(dirpath, "initial.csv"), record.initial)
    files["initial"] = "initial.csv"
    endpoint_files = []
    for k, fld in enumerate(record.endpoints):
        name = f"endpoint_{k:02d}.csv"
        storage.write_field_csv(os.path.join(dirpath, name), fld)
        endpoint_files.append(name)
    files["endpoints"] = endpoint_files
    storage.write_manifest(os.path.join(dirpath, "manifest.json"), {
        "member_id": record.member_id,
        "epsilons": list(record.epsilons),
        "deltas": list(record.deltas),
        "grid_counts": [list(c) for c in record.grid_counts],
        "files": files,
    })


def load_record(dirpath) -> GermRecord:
    manifest = storage.read_manifest(os.path.join(dirpath, "manifest.json"))
    initial = storage.read_field_csv(os.path.join(dirpath, manifest["files"]["initial"]))
    endpoints = tuple(storage.read_field_csv(os.path.join(dirpath, name))
                      for name in manifest["files"]["endpoints"])
    return GermRecord(
        member_id=manifest["member_id"],
        epsilons=tuple(manifest["epsilons"]),
        initial=initial,
        endpoints=endpoints,
        deltas=tuple(manifest["deltas"]),
        grid_counts=tuple(tuple(c) for c in manifest["grid_counts"]),
    )


def save_level_result(result: GermLevelResult, dirpath, extra: dict | None = None):
    storage.ensure_dir(dirpath)
    for record in result.records:
        save_record(record, os.path.join(dirpath, "records", record.member_id))
    storage.write_matrix_csv(os.path.join(dirpath, "data_distances.csv"),
                             result.matrix.ids, result.matrix.data_distances)
    storage.write_matrix_csv(os.path.join(dirpath, "limit_distances.csv"),
                             result.matrix.ids, result.matrix.limit_distances)
    storage.write_matrix_csv(os.path.join(dirpath, "contraction_ratios.csv"),
                             result.matrix.ids, result.matrix.ratios)
    manifest = {
        "level": result.level,
        "members": list(result.matrix.ids),
        "selection": {
            "indices": list(result.selection.indices),
            "pass": result.selection.passed,
            "threshold": result.selection.threshold,
            "steps": list(result.selection.steps),
            "failed_member": result.selection.failed_member,
        },
        "stability": {
            "worst_ratio": result.stability.worst_ratio,
            "worst_pair": list(result.stability.worst_pair) if result.stability.worst_pair else None,
            "pass": result.stability.passed,
        },
    }
    if result.matrix.cone is not None:
        cone = result.matrix.cone
        manifest["contraction_cone"] = {
            "center": list(cone.center), "radius": cone.radius, "speed": cone.speed,
        }
    if extra:
        manifest.update(extra)
    storage.write_manifest(os.path.join(dirpath, "manifest.json"), manifest)
