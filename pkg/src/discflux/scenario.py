"""Scenario files: one JSON document describes a flux, a grid, a viscous run
and an optional study block for the chosen check.  Validation is strict
(unknown keys are errors) and failures carry JSON-pointer paths."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .flux import PiecewiseFlux
from .geometry import Box, as_points
from .presets import PRESET_NAMES, resolve_flux
from .solver import Field, Grid, RunConfig

SCENARIO_KINDS = ("run", "entropy-check", "kato-check", "cone-check", "converge", "germ")

_NUMBER_ARRAY = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

_DOMAIN_SCHEMA = {
    "type": "object",
    "required": ["lows", "highs"],
    "additionalProperties": False,
    "properties": {"lows": _NUMBER_ARRAY, "highs": _NUMBER_ARRAY},
}

_COMPONENT_SCHEMA = {
    "type": "object",
    "required": ["poly_lambda"],
    "additionalProperties": False,
    "properties": {
        "poly_lambda": _NUMBER_ARRAY,
        "x_modulation": {"enum": ["none", "affine"]},
        "x_modulation_coeffs": _NUMBER_ARRAY,
    },
}

_INTERFACE_SCHEMA = {
    "type": "object",
    "required": ["axis", "zeta"],
    "additionalProperties": False,
    "properties": {
        "axis": {"type": "integer", "minimum": 1, "maximum": 2},
        "zeta": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "affine", "poly"]},
                "coeffs": {"type": "array", "items": {"type": "number"}},
            },
        },
    },
}

_COMPONENT_LIST = {"type": "array", "items": _COMPONENT_SCHEMA, "minItems": 1, "maxItems": 2}

_FLUX_OBJECT_SCHEMA = {
    "type": "object",
    "required": ["d", "a", "b", "left"],
    "additionalProperties": False,
    "properties": {
        "d": {"enum": [1, 2]},
        "a": {"type": "number"},
        "b": {"type": "number"},
        "interface": {"anyOf": [{"type": "null"}, _INTERFACE_SCHEMA]},
        "left": _COMPONENT_LIST,
        "right": {"anyOf": [{"type": "null"}, _COMPONENT_LIST]},
        "domain": _DOMAIN_SCHEMA,
    },
}

_BOUNDARY_SCHEMA = {
    "anyOf": [
        {"type": "number"},
        {
            "type": "array",
            "minItems": 1,
            "maxItems": 2,
            "items": {
                "type": "array",
                "items": {"type": "number"},
                "minItems": 2,
                "maxItems": 2,
            },
        },
    ]
}

_RUN_SCHEMA = {
    "type": "object",
    "required": ["epsilon", "final_time", "boundary"],
    "additionalProperties": False,
    "properties": {
        "epsilon": _POSITIVE,
        "final_time": _POSITIVE,
        "boundary": _BOUNDARY_SCHEMA,
        "cfl": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "smoothing_width": _POSITIVE,
        "output_count": {"type": "integer", "minimum": 2},
        "output_times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    },
}

# initial data kinds; the envelope only fixes "kind", the per-kind schema is
# applied afterwards so errors point into the right block
_INITIAL_KINDS = ("constant", "riemann", "block", "bump", "steps", "random_steps")

_INITIAL_ENVELOPE = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": list(_INITIAL_KINDS)}},
}

_INITIAL_SCHEMAS = {
    "constant": {
        "type": "object",
        "required": ["kind", "value"],
        "additionalProperties": False,
        "properties": {"kind": {"const": "constant"}, "value": {"type": "number"}},
    },
    "riemann": {
        "type": "object",
        "required": ["kind", "left", "right", "position"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "riemann"},
            "left": {"type": "number"},
            "right": {"type": "number"},
            "position": {"type": "number"},
            "axis": {"type": "integer", "minimum": 1, "maximum": 2},
        },
    },
    "block": {
        "type": "object",
        "required": ["kind", "inside", "outside", "lows", "highs"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "block"},
            "inside": {"type": "number"},
            "outside": {"type": "number"},
            "lows": _NUMBER_ARRAY,
            "highs": _NUMBER_ARRAY,
        },
    },
    "bump": {
        "type": "object",
        "required": ["kind", "base", "amplitude", "center", "radius"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "bump"},
            "base": {"type": "number"},
            "amplitude": {"type": "number"},
            "center": _NUMBER_ARRAY,
            "radius": _POSITIVE,
        },
    },
    "steps": {
        "type": "object",
        "required": ["kind", "breakpoints", "values"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "steps"},
            "breakpoints": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "values": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        },
    },
    "random_steps": {
        "type": "object",
        "required": ["kind", "pieces"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "random_steps"},
            "pieces": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0},
        },
    },
}

_CHART_SCHEMA = {
    "type": "object",
    "required": ["center", "radius"],
    "additionalProperties": False,
    "properties": {"center": _NUMBER_ARRAY, "radius": _POSITIVE},
}

_EPSILONS_SCHEMA = {"type": "array", "items": _POSITIVE, "minItems": 2}

_STUDY_SCHEMAS = {
    "run": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"tol_factor": _POSITIVE},
    },
    "entropy-check": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "tol_factor": _POSITIVE,
            "bumps": {"type": "integer", "minimum": 1},
            "transformed": {"type": "boolean"},
        },
    },
    "kato-check": {
        "type": "object",
        "required": ["initial_b"],
        "additionalProperties": False,
        "properties": {
            "tol_factor": _POSITIVE,
            "bumps": {"type": "integer", "minimum": 1},
            "initial_b": _INITIAL_ENVELOPE,
        },
    },
    "cone-check": {
        "type": "object",
        "required": ["cone", "perturbation"],
        "additionalProperties": False,
        "properties": {
            "cone": {
                "type": "object",
                "required": ["center", "radius"],
                "additionalProperties": False,
                "properties": {"center": _NUMBER_ARRAY, "radius": _POSITIVE},
            },
            "perturbation": _INITIAL_ENVELOPE,
            "tol": _POSITIVE,
        },
    },
    "converge": {
        "type": "object",
        "required": ["epsilons"],
        "additionalProperties": False,
        "properties": {
            "epsilons": _EPSILONS_SCHEMA,
            "cell_budget": {"type": "integer", "minimum": 16},
        },
    },
    "germ": {
        "type": "object",
        "required": ["level", "epsilons"],
        "additionalProperties": False,
        "properties": {
            "level": {"type": "integer", "minimum": 0, "maximum": 3},
            "epsilons": _EPSILONS_SCHEMA,
            "threshold": _POSITIVE,
            "cell_budget": {"type": "integer", "minimum": 16},
            "solve_target": _INITIAL_ENVELOPE,
        },
    },
}

_BASE_SCHEMA = {
    "type": "object",
    "required": ["kind", "flux", "grid", "run", "initial"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": list(SCENARIO_KINDS)},
        "flux": {"type": ["string", "object"]},
        "domain": _DOMAIN_SCHEMA,
        "grid": {
            "type": "object",
            "required": ["counts"],
            "additionalProperties": False,
            "properties": {
                "counts": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 4},
                    "minItems": 1,
                    "maxItems": 2,
                }
            },
        },
        "run": _RUN_SCHEMA,
        "initial": _INITIAL_ENVELOPE,
        "chart": _CHART_SCHEMA,
        "study": {"type": "object"},
    },
}


class ScenarioError(ValueError):
    """Scenario file rejected; the message carries a JSON-pointer path."""


def _json_pointer(error, prefix: str = "") -> str:
    parts = "".join(f"/{p}" for p in error.absolute_path)
    return (prefix + parts) or "/"


def _validate(instance, schema, prefix: str = ""):
    validator = Draft202012Validator(schema)
    err = best_match(validator.iter_errors(instance))
    if err is not None:
        # descend into anyOf context for a pointed message
        while err.context:
            err = best_match(err.context)
        raise ScenarioError(f"{_json_pointer(err, prefix)}: {err.message}")


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def builtin_scenario_path(name: str) -> str:
    if not name.endswith(".json"):
        name = name + ".json"
    path = resources.files("discflux").joinpath("scenarios", name)
    if not path.is_file():
        raise ScenarioError(f"no builtin scenario named {name!r}")
    return str(path)


def builtin_scenario_names() -> tuple[str, ...]:
    root = resources.files("discflux").joinpath("scenarios")
    return tuple(sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json")))


# ---------------------------------------------------------------------------
# initial data


def initial_values_at(spec: dict, pts, a: float, b: float, d: int, seed: int = 0) -> np.ndarray:
    """Evaluate an initial-data spec at points of shape (..., d).  Values are
    required to stay inside [a, b]."""
    pts = as_points(pts, d)
    kind = spec["kind"]
    if kind == "constant":
        out = np.full(pts.shape[:-1], float(spec["value"]))
    elif kind == "riemann":
        axis = int(spec.get("axis", 1)) - 1
        out = np.where(pts[..., axis] < float(spec["position"]),
                       float(spec["left"]), float(spec["right"]))
    elif kind == "block":
        lows = np.asarray(spec["lows"], dtype=float)
        highs = np.asarray(spec["highs"], dtype=float)
        if lows.shape != (d,) or highs.shape != (d,):
            raise ScenarioError(f"/initial: block bounds must have length {d}")
        inside = np.all((pts >= lows) & (pts < highs), axis=-1)
        out = np.where(inside, float(spec["inside"]), float(spec["outside"]))
    elif kind == "bump":
        center = np.asarray(spec["center"], dtype=float)
        if center.shape != (d,):
            raise ScenarioError(f"/initial: bump center must have length {d}")
        r = np.linalg.norm(pts - center, axis=-1) / float(spec["radius"])
        profile = np.where(r < 1.0, (1.0 - np.minimum(r, 1.0) ** 2) ** 2, 0.0)
        out = float(spec["base"]) + float(spec["amplitude"]) * profile
    elif kind == "steps":
        if d != 1:
            raise ScenarioError("/initial: steps data is one-dimensional")
        breaks = np.asarray(spec["breakpoints"], dtype=float)
        values = np.asarray(spec["values"], dtype=float)
        if values.size != breaks.size + 1:
            raise ScenarioError("/initial: steps needs exactly one more value than breakpoints")
        if (np.diff(breaks) <= 0).any():
            raise ScenarioError("/initial: steps breakpoints must increase")
        out = values[np.searchsorted(breaks, pts[..., 0], side="right")]
    elif kind == "random_steps":
        if d != 1:
            raise ScenarioError("/initial: random_steps data is one-dimensional")
        pieces = int(spec["pieces"])
        rng = np.random.default_rng(int(spec.get("seed", seed)))
        values = rng.uniform(a, b, size=pieces)
        lo = float(pts[..., 0].min())
        hi = float(pts[..., 0].max())
        width = (hi - lo) / pieces if hi > lo else 1.0
        idx = np.clip(np.floor((pts[..., 0] - lo) / width).astype(int), 0, pieces - 1)
        out = values[idx]
    else:
        raise ScenarioError(f"/initial/kind: unknown kind {kind!r}")
    if out.min() < a - 1e-12 or out.max() > b + 1e-12:
        raise ScenarioError(
            f"/initial: values reach [{out.min()}, {out.max()}], outside the state interval [{a}, {b}]"
        )
    return np.clip(out, a, b)


def validate_initial(spec, prefix: str = "/initial"):
    _validate(spec, _INITIAL_ENVELOPE, prefix)
    _validate(spec, _INITIAL_SCHEMAS[spec["kind"]], prefix)


# ---------------------------------------------------------------------------
# scenario parsing


@dataclass(frozen=True)
class Scenario:
    path: str
    name: str
    kind: str
    raw: dict
    model: PiecewiseFlux
    grid: Grid
    config: RunConfig
    initial: dict
    study: dict
    chart: dict | None
    seed: int = 0

    def initial_field(self, grid: Grid | None = None, seed: int | None = None) -> Field:
        grid = grid if grid is not None else self.grid
        use = self.seed if seed is None else seed
        vals = initial_values_at(self.initial, grid.points(), self.model.a, self.model.b,
                                 self.model.d, seed=use)
        return Field(grid, vals, 0.0)

    def field_from_spec(self, spec: dict, grid: Grid | None = None, seed: int | None = None) -> Field:
        grid = grid if grid is not None else self.grid
        use = self.seed if seed is None else seed
        vals = initial_values_at(spec, grid.points(), self.model.a, self.model.b,
                                 self.model.d, seed=use)
        return Field(grid, vals, 0.0)


def _boundary_from_json(value):
    if isinstance(value, (int, float)):
        return float(value)
    return tuple((float(lo), float(hi)) for lo, hi in value)


def _output_times(run_block: dict, final_time: float):
    if "output_times" in run_block:
        return tuple(float(t) for t in run_block["output_times"])
    if "output_count" in run_block:
        return tuple(np.linspace(0.0, final_time, int(run_block["output_count"])))
    return None


def scenario_from_dict(raw: dict, path: str = "<memory>", seed: int = 0) -> Scenario:
    _validate(raw, _BASE_SCHEMA)
    kind = raw["kind"]

    flux_value = raw["flux"]
    if isinstance(flux_value, str):
        if flux_value not in PRESET_NAMES:
            raise ScenarioError(
                f"/flux: unknown preset {flux_value!r}; available: {', '.join(PRESET_NAMES)}"
            )
    else:
        _validate(flux_value, _FLUX_OBJECT_SCHEMA, "/flux")

    domain = None
    if "domain" in raw:
        lows = raw["domain"]["lows"]
        highs = raw["domain"]["highs"]
        if len(lows) != len(highs):
            raise ScenarioError("/domain: lows and highs must have equal length")
        try:
            domain = Box(tuple(float(v) for v in lows), tuple(float(v) for v in highs))
        except ValueError as exc:
            raise ScenarioError(f"/domain: {exc}") from None

    try:
        model = resolve_flux(flux_value, domain=domain)
    except (ValueError, KeyError) as exc:
        raise ScenarioError(f"/flux: {exc}") from None

    counts = raw["grid"]["counts"]
    if len(counts) != model.d:
        raise ScenarioError(f"/grid/counts: expected {model.d} entries for this flux, got {len(counts)}")
    grid = Grid(model.domain.lows, model.domain.highs, tuple(int(n) for n in counts))

    run_block = raw["run"]
    if "output_times" in run_block and "output_count" in run_block:
        raise ScenarioError("/run: give output_times or output_count, not both")
    try:
        config = RunConfig(
            flux=model,
            epsilon=float(run_block["epsilon"]),
            final_time=float(run_block["final_time"]),
            boundary=_boundary_from_json(run_block["boundary"]),
            cfl=float(run_block.get("cfl", 0.45)),
            output_times=_output_times(run_block, float(run_block["final_time"])),
            smoothing_width=(float(run_block["smoothing_width"])
                             if "smoothing_width" in run_block else None),
        )
    except ValueError as exc:
        raise ScenarioError(f"/run: {exc}") from None

    validate_initial(raw["initial"])

    study = raw.get("study", {})
    _validate(study, _STUDY_SCHEMAS[kind], "/study")
    if kind == "kato-check":
        validate_initial(study["initial_b"], "/study/initial_b")
    if kind == "cone-check":
        validate_initial(study["perturbation"], "/study/perturbation")
    if kind == "germ" and "solve_target" in study:
        validate_initial(study["solve_target"], "/study/solve_target")

    chart = None
    if "chart" in raw:
        center = raw["chart"]["center"]
        if len(center) != model.d:
            raise ScenarioError(f"/chart/center: expected {model.d} coordinates")
        chart = {"center": tuple(float(v) for v in center), "radius": float(raw["chart"]["radius"])}

    name = raw.get("name") or os.path.splitext(os.path.basename(path))[0]
    return Scenario(path=path, name=name, kind=kind, raw=raw, model=model, grid=grid,
                    config=config, initial=dict(raw["initial"]), study=dict(study),
                    chart=chart, seed=seed)


def parse_scenario(path, seed: int = 0) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(raw, path=str(path), seed=seed)
