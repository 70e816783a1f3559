"""Experiment configuration: JSON schema, validation and the parsed record."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import jsonschema

from .errors import ConfigError
from .lattice import ModelParams, ParityError, TrigPoly
from .quadrature import QuadratureGrid, build_grid, lambda_patches

COMMANDS = (
    "classify", "calibrate", "friedrichs-spectrum", "essential-spectrum", "count", "oracle-check",
    "expansion-fit", "u-coefficient", "s-r-limit", "efimov-verify", "singular-part",
)

_FACTOR = {
    "type": "object",
    "properties": {
        "axis": {"enum": [1, 2, 3]},
        "harmonic": {"type": "integer", "minimum": 1},
        "kind": {"enum": ["cos", "sin"]},
    },
    "required": ["axis", "harmonic", "kind"],
    "additionalProperties": False,
}

TRIG_POLY_SCHEMA = {
    "type": "object",
    "properties": {
        "constant": {"type": "number"},
        "terms": {"type": "array", "items": {
            "type": "object",
            "properties": {**_FACTOR["properties"], "coef": {"type": "number"}},
            "required": ["axis", "harmonic", "kind", "coef"],
            "additionalProperties": False,
        }},
        "products": {"type": "array", "items": {
            "type": "object",
            "properties": {"coef": {"type": "number"}, "factors": {"type": "array", "items": _FACTOR, "minItems": 1}},
            "required": ["coef", "factors"],
            "additionalProperties": False,
        }},
        "parity": {"type": "array", "items": {"enum": ["even", "odd"]}, "minItems": 3, "maxItems": 3},
    },
    "additionalProperties": False,
}

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "params": {
            "type": "object",
            "properties": {
                "l1": _POS, "l2": _POS,
                "n": {"type": "integer", "minimum": 1},
                "w0": TRIG_POLY_SCHEMA, "v0": TRIG_POLY_SCHEMA, "v1": TRIG_POLY_SCHEMA,
            },
            "additionalProperties": False,
        },
        "coupling": {
            "type": "object",
            "properties": {"shape": TRIG_POLY_SCHEMA, "scale": _POS, "on_grid": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "shift": {"type": "boolean"},
                "refine_depth": {"type": "integer", "minimum": 0},
                "delta": _POS,
                "order": {"type": "integer", "minimum": 1, "maximum": 8},
                "grading": _POS,
                "depth_per_decade": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "K": {"oneOf": [_POINT, {"type": "array", "items": _POINT, "minItems": 1}]},
        "p_prime": _POINT,
        "direction": _POINT,
        "z_list": {"type": "array", "items": {"type": "number", "exclusiveMaximum": 0}, "minItems": 1},
        "gamma_list": {"type": "array", "items": _POS, "minItems": 1},
        "r_list": {"type": "array", "items": _POS, "minItems": 1},
        "p_resolution": {"type": "integer", "minimum": 1},
        "lmax": {"type": "integer", "minimum": 0},
        "theta_max": _POS,
        "nodes_per_unit": {"type": "integer", "minimum": 1},
        "t0": _POS,
        "steps": {"type": "integer", "minimum": 3},
        "output": {
            "type": "object",
            "properties": {
                "format": {"enum": ["csv", "json"]},
                "path": {"type": "string"},
                "svg": {"type": "string"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["command"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class GridSettings:
    N: int
    shift: bool
    refine_depth: int
    delta: float
    order: int
    grading: float
    depth_per_decade: bool

    def build(self, n: int, depth: int | None = None) -> QuadratureGrid:
        depth = self.refine_depth if depth is None else depth
        refine = lambda_patches(n, depth, self.delta) if depth > 0 else ()
        try:
            return build_grid(self.N, self.shift, refine, order=self.order, grading=self.grading)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}; increase grid/N") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    params: ModelParams
    coupling: dict | None
    grid: GridSettings
    options: dict
    output: dict
    raw: dict
    digest: str


# per-command grid defaults: base N (raised to a multiple of 2n, at least 8n), depth, Gauss order
GRID_DEFAULTS = {
    "classify": (16, 14, 2), "calibrate": (16, 14, 2), "expansion-fit": (16, 14, 2),
    "friedrichs-spectrum": (16, 8, 2), "essential-spectrum": (8, 6, 1),
    "count": (8, 4, 1), "efimov-verify": (8, 4, 1), "singular-part": (16, 8, 1),
    "oracle-check": (4, 0, 1), "u-coefficient": (8, 0, 1), "s-r-limit": (8, 0, 1),
}


def grid_settings(command: str, n: int, g: dict) -> GridSettings:
    base_N, depth, order = GRID_DEFAULTS[command]
    if "N" in g:
        N = int(g["N"])
    else:
        N = max(base_N, 8 * n)
        N += (-N) % (2 * n)
    return GridSettings(
        N=N, shift=bool(g.get("shift", True)), refine_depth=int(g.get("refine_depth", depth)),
        delta=float(g.get("delta", math.pi / (4 * n))), order=int(g.get("order", order)),
        grading=float(g.get("grading", 2.0)), depth_per_decade=bool(g.get("depth_per_decade", True)),
    )


def canonical_digest(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def parse_config(text: str) -> ExperimentConfig:
    """Validate a JSON config; every problem found is reported in one :class:`ConfigError`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    problems = [f"{_where(e)}: {e.message}"
                for e in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))]
    if problems:
        raise ConfigError(problems)

    p = doc.get("params", {})
    polys = {}
    for name in ("w0", "v0", "v1"):
        if name in p:
            try:
                polys[name] = TrigPoly.from_dict(p[name])
            except (ValueError, ParityError) as exc:
                problems.append(f"params/{name}: {exc}")
    shape = None
    coupling = doc.get("coupling")
    if coupling is not None and "shape" in coupling:
        try:
            shape = TrigPoly.from_dict(coupling["shape"])
            if None in shape.axis_parity():
                problems.append("coupling/shape: must be even or odd in each variable")
        except (ValueError, ParityError) as exc:
            problems.append(f"coupling/shape: {exc}")
    params = None
    if not problems:
        try:
            params = ModelParams(l1=float(p.get("l1", 1.0)), l2=float(p.get("l2", 1.0)), n=int(p.get("n", 1)),
                                 **polys)
        except (ValueError, ParityError) as exc:
            problems.append(f"params: {exc}")

    n = int(p.get("n", 1))
    settings = grid_settings(doc["command"], n, doc.get("grid", {}))
    if settings.refine_depth > 0 and (settings.N % 2 or settings.N % n):
        problems.append(f"grid/N: {settings.N} must be even and a multiple of n={n} when refine_depth > 0")
    if settings.delta > math.pi / (4 * n) + 1e-15:
        problems.append(f"grid/delta: {settings.delta} exceeds pi/(4n) = {math.pi / (4 * n)}")
    if problems:
        raise ConfigError(problems)

    coupling_out = None
    if coupling is not None:
        coupling_out = {"shape": shape if shape is not None else params.v1,
                        "scale": float(coupling.get("scale", 1.0)),
                        "on_grid": bool(coupling.get("on_grid", False))}
    skip = {"command", "params", "coupling", "grid", "output"}
    return ExperimentConfig(
        command=doc["command"], params=params, coupling=coupling_out, grid=settings,
        options={k: v for k, v in doc.items() if k not in skip}, output=dict(doc.get("output", {})),
        raw=doc, digest=canonical_digest(doc),
    )
