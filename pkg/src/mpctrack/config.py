"""JSON run-configuration: schema validation and object construction.

Configs are validated against a JSON schema (unknown keys rejected) before
any numerics run.  Matrices are row-major nested arrays; constraints are
either an explicit half-space pair {"G", "w"} or the box shorthand
{"x_inf", "u_inf"}.
"""

import hashlib
import json
from dataclasses import dataclass

import jsonschema
import numpy as np

from .controller import MpctConfig, OffsetCostSpec
from .errors import ConfigError
from .model import ConstraintSet, LtiModel
from .polytope import HPolytope
from .sim import ALL_MONITORS, Scenario

MATRIX = {"type": "array", "minItems": 1,
          "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
VECTOR = {"type": "array", "minItems": 1, "items": {"type": "number"}}
SCALAR_OR_VECTOR = {"oneOf": [{"type": "number"}, VECTOR]}

OFFSET_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "quadratic"}, "T": MATRIX},
         "required": ["kind", "T"], "additionalProperties": False},
        {"properties": {"kind": {"const": "one_norm"},
                        "gamma": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["kind", "gamma"], "additionalProperties": False},
        {"properties": {"kind": {"const": "inf_norm"},
                        "gamma": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["kind", "gamma"], "additionalProperties": False},
    ],
}

_CONTROLLER_PROPS = {
    "N": {"type": "integer", "minimum": 1},
    "Q": MATRIX,
    "R": MATRIX,
    "terminal": {"enum": ["equality", "inequality"]},
    "offset": OFFSET_SCHEMA,
    "use_theta": {"type": "boolean"},
}

CONTROLLER_SCHEMA = {
    "type": "object",
    "properties": _CONTROLLER_PROPS,
    "required": ["N", "Q", "R", "offset"],
    "additionalProperties": False,
}

VARIANT_SCHEMA = {
    "type": "object",
    "properties": {**_CONTROLLER_PROPS,
                   "name": {"type": "string"},
                   "regulation_to": VECTOR},
    "required": ["name"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "constraints"],
    "properties": {
        "notes": {"type": "string"},
        "seed": {"type": "integer"},
        "lambda": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "model": {
            "type": "object",
            "properties": {"A": MATRIX, "B": MATRIX, "C": MATRIX, "D": MATRIX},
            "required": ["A", "B", "C", "D"],
            "additionalProperties": False,
        },
        "constraints": {
            "type": "object",
            "oneOf": [
                {"properties": {"G": MATRIX, "w": VECTOR},
                 "required": ["G", "w"], "additionalProperties": False},
                {"properties": {"x_inf": SCALAR_OR_VECTOR,
                                "u_inf": SCALAR_OR_VECTOR},
                 "anyOf": [{"required": ["x_inf"]}, {"required": ["u_inf"]}],
                 "additionalProperties": False},
            ],
        },
        "controller": CONTROLLER_SCHEMA,
        "scenario": {
            "type": "object",
            "properties": {
                "x0": VECTOR,
                "steps": {"type": "integer", "minimum": 1},
                "schedule": {"type": "array", "minItems": 1,
                             "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                       "prefixItems": [{"type": "integer", "minimum": 0},
                                                       VECTOR]}},
                "monitors": {"type": "array",
                             "items": {"enum": list(ALL_MONITORS)}},
            },
            "required": ["x0", "steps", "schedule"],
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {"x0": VECTOR, "y_sp": VECTOR,
                           "gammas": {"type": "array", "minItems": 1,
                                      "items": {"type": "number",
                                                "exclusiveMinimum": 0}}},
            "required": ["x0", "y_sp", "gammas"],
            "additionalProperties": False,
        },
        "compare": {
            "type": "object",
            "properties": {
                "grid": {"type": "object",
                         "properties": {"lo": VECTOR, "hi": VECTOR,
                                        "shape": {"type": "array", "minItems": 2,
                                                  "maxItems": 2,
                                                  "items": {"type": "integer",
                                                            "minimum": 2}}},
                         "required": ["lo", "hi", "shape"],
                         "additionalProperties": False},
                "samples": {"type": "object",
                            "properties": {"count": {"type": "integer", "minimum": 1},
                                           "lo": VECTOR, "hi": VECTOR},
                            "required": ["count", "lo", "hi"],
                            "additionalProperties": False},
                "points": {"type": "array", "items": VECTOR},
                "controllers": {"type": "array", "minItems": 1,
                                "items": VARIANT_SCHEMA},
                "assert_subset": {"type": "array",
                                  "items": {"type": "array", "minItems": 2,
                                            "maxItems": 2,
                                            "items": {"type": "string"}}},
            },
            "required": ["controllers"],
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": {"type": "number"},
        },
    },
}

# pipeline-level tolerance knobs surfaced to configs and --tol-override
TOLERANCE_DEFAULTS = {
    "mais_max_iter": 200.0,
    "convergence_tol": 1e-3,
    "convergence_hold": 5.0,
    "constraint_tol": 1e-7,
    "lyapunov_slack": 1e-6,
}


def load_config(path):
    """Parse and schema-validate a config file; unknown keys are rejected."""
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        loc = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: invalid config at {loc}: {err.message}")
    return data


def merge_tolerances(cfg, overrides=None):
    tols = dict(TOLERANCE_DEFAULTS)
    for source, label in ((cfg.get("tolerances", {}), "config tolerances"),
                          (overrides or {}, "--tol-override")):
        for key, val in source.items():
            if key not in TOLERANCE_DEFAULTS:
                raise ConfigError(
                    f"{label}: unknown tolerance {key!r}; known: "
                    f"{sorted(TOLERANCE_DEFAULTS)}")
            tols[key] = float(val)
    return tols


def parse_tol_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--tol-override expects KEY=VAL, got {pair!r}")
        key, _, val = pair.partition("=")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"--tol-override {key}: {val!r} is not a number") from exc
    return out


def build_model(cfg) -> LtiModel:
    md = cfg["model"]
    return LtiModel(np.asarray(md["A"]), np.asarray(md["B"]),
                    np.asarray(md["C"]), np.asarray(md["D"]))


def build_constraints(cfg, model: LtiModel) -> ConstraintSet:
    cd = cfg["constraints"]
    lam = float(cfg.get("lambda", 0.99))
    if "G" in cd:
        cons = ConstraintSet(HPolytope(np.asarray(cd["G"]), np.asarray(cd["w"])), lam)
    else:
        cons = ConstraintSet.from_box(cd.get("x_inf"), cd.get("u_inf"),
                                      model.n, model.m, lam)
    return cons.validate(model)


def build_offset(d) -> OffsetCostSpec:
    if d["kind"] == "quadratic":
        return OffsetCostSpec.quadratic(np.asarray(d["T"]))
    if d["kind"] == "one_norm":
        return OffsetCostSpec.one_norm(d["gamma"])
    return OffsetCostSpec.inf_norm(d["gamma"])


def build_controller_config(cd, ingredients=None) -> MpctConfig:
    return MpctConfig(
        N=int(cd["N"]),
        Q=np.asarray(cd["Q"], dtype=float),
        R=np.asarray(cd["R"], dtype=float),
        offset=build_offset(cd["offset"]),
        terminal=cd.get("terminal", "equality"),
        ingredients=ingredients,
        use_theta=bool(cd.get("use_theta", True)),
    )


def build_scenario(cfg) -> Scenario:
    sd = cfg["scenario"]
    return Scenario(
        x0=np.asarray(sd["x0"], dtype=float),
        schedule=tuple((int(k), np.asarray(y, dtype=float)) for k, y in sd["schedule"]),
        steps=int(sd["steps"]),
        monitors=tuple(sd.get("monitors", ALL_MONITORS)),
    )


def model_hash(cfg) -> str:
    """Digest of everything the cached terminal ingredients depend on."""
    ctl = cfg.get("controller", {})
    payload = {
        "model": cfg["model"],
        "constraints": cfg["constraints"],
        "lambda": cfg.get("lambda", 0.99),
        "Q": ctl.get("Q"),
        "R": ctl.get("R"),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
