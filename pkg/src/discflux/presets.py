"""Shipped flux models and the JSON description of the polynomial family.

A flux spec is a dict

    {"d": int, "a": num, "b": num,
     "interface": {"axis": int, "zeta": {"kind": "zero|affine|poly", "coeffs": [...]}} | null,
     "left":  [{"poly_lambda": [c0, c1, ...], "x_modulation": "none" | "affine",
                "x_modulation_coeffs": [m0, m1, ...]?}, ...],
     "right": [...] | null}

interface null means a jump-free flux; right null reuses the left family.
The affine modulation m(x) = m0 + sum m_k x_k needs the extra coefficient
field, which is only allowed (and then required) when x_modulation is
"affine".
"""
from __future__ import annotations

import copy

from .flux import PiecewiseFlux, poly_component
from .geometry import Box, Interface

FLUX_SPEC_KEYS = {"d", "a", "b", "interface", "left", "right"}
COMPONENT_KEYS = {"poly_lambda", "x_modulation", "x_modulation_coeffs"}


def _component_from_spec(axis: int, spec: dict, d: int):
    unknown = set(spec) - COMPONENT_KEYS
    if unknown:
        raise ValueError(f"unknown flux component keys: {sorted(unknown)}")
    coeffs = spec["poly_lambda"]
    if not coeffs:
        raise ValueError("poly_lambda must be non-empty")
    modulation = spec.get("x_modulation", "none")
    if modulation == "none":
        if "x_modulation_coeffs" in spec:
            raise ValueError("x_modulation_coeffs given but x_modulation is 'none'")
        return poly_component(axis, coeffs)
    if modulation == "affine":
        mod = spec.get("x_modulation_coeffs")
        if mod is None or len(mod) != d + 1:
            raise ValueError(f"affine modulation needs {d + 1} coefficients")
        return poly_component(axis, coeffs, modulation=mod)
    raise ValueError(f"unknown x_modulation {modulation!r}")


def flux_from_spec(spec: dict, domain: Box | None = None, name: str | None = None) -> PiecewiseFlux:
    unknown = set(spec) - FLUX_SPEC_KEYS - {"domain"}
    if unknown:
        raise ValueError(f"unknown flux spec keys: {sorted(unknown)}")
    d = int(spec["d"])
    if d not in (1, 2):
        raise ValueError("only d in {1, 2} is supported")
    a, b = float(spec["a"]), float(spec["b"])
    if domain is None:
        dom = spec.get("domain")
        domain = Box(tuple(dom["lows"]), tuple(dom["highs"])) if dom else Box((-1.0,) * d, (1.0,) * d)

    left = tuple(_component_from_spec(k, spec["left"][k], d) for k in range(d))
    if spec.get("interface") is None:
        interface = None
        right = left
        if spec.get("right") not in (None, spec["left"]):
            # allow an explicit identical right family; anything else is a
            # contradiction with the missing interface
            if spec["right"] != spec["left"]:
                raise ValueError("jump-free flux (interface null) with a distinct right family")
            right = left
    else:
        interface = Interface.from_spec(spec["interface"], d)
        if spec.get("right") is None:
            right = left
        else:
            right = tuple(_component_from_spec(k, spec["right"][k], d) for k in range(d))
    return PiecewiseFlux(
        d=d,
        left=left,
        right=right,
        interface=interface,
        a=a,
        b=b,
        domain=domain,
        name=name,
        spec=copy.deepcopy(spec),
    )


_PRESET_SPECS: dict[str, dict] = {
    # traffic-type concave flux, no interface
    "burgers": {
        "d": 1,
        "a": 0.0,
        "b": 1.0,
        "interface": None,
        "left": [{"poly_lambda": [0.0, 1.0, -1.0], "x_modulation": "none"}],
        "right": None,
    },
    # same shape on the left, doubled capacity on the right of x1 = 0
    "two_flux": {
        "d": 1,
        "a": 0.0,
        "b": 1.0,
        "interface": {"axis": 1, "zeta": {"kind": "zero", "coeffs": [0.0]}},
        "left": [{"poly_lambda": [0.0, 1.0, -1.0], "x_modulation": "none"}],
        "right": [{"poly_lambda": [0.0, 2.0, -2.0], "x_modulation": "none"}],
    },
    # jump-free but spatially modulated: exercises the smooth divergence terms
    "x_ramp": {
        "d": 1,
        "a": 0.0,
        "b": 1.0,
        "interface": None,
        "left": [
            {
                "poly_lambda": [0.0, 1.0, -1.0],
                "x_modulation": "affine",
                "x_modulation_coeffs": [1.0, 0.3],
            }
        ],
        "right": None,
    },
    # d = 2 with an affine interface x1 = 0.2 x2 and a genuinely different
    # tangential state dependence (keeps every direction non-degenerate)
    "tilted_2d": {
        "d": 2,
        "a": 0.0,
        "b": 1.0,
        "interface": {"axis": 1, "zeta": {"kind": "affine", "coeffs": [0.0, 0.2]}},
        "left": [
            {"poly_lambda": [0.0, 1.0, -1.0], "x_modulation": "none"},
            {"poly_lambda": [0.0, 0.0, 0.3, -0.3], "x_modulation": "none"},
        ],
        "right": [
            {"poly_lambda": [0.0, 2.0, -2.0], "x_modulation": "none"},
            {"poly_lambda": [0.0, 0.0, 0.3, -0.3], "x_modulation": "none"},
        ],
    },
}

PRESET_NAMES = tuple(sorted(_PRESET_SPECS))


def preset(name: str) -> PiecewiseFlux:
    try:
        spec = _PRESET_SPECS[name]
    except KeyError:
        raise ValueError(f"unknown flux preset {name!r}; available: {', '.join(PRESET_NAMES)}") from None
    return flux_from_spec(copy.deepcopy(spec), name=name)


def resolve_flux(value, domain: Box | None = None) -> PiecewiseFlux:
    """Accept a preset name or an inline flux spec dict."""
    if isinstance(value, str):
        model = preset(value)
        if domain is not None:
            model = PiecewiseFlux(
                d=model.d,
                left=model.left,
                right=model.right,
                interface=model.interface,
                a=model.a,
                b=model.b,
                domain=domain,
                name=model.name,
                spec=model.spec,
            )
        return model
    if isinstance(value, dict):
        return flux_from_spec(value, domain=domain)
    raise ValueError("flux must be a preset name or a spec object")
