"""Run configuration: JSON schema validation and object construction.

Unknown keys are rejected everywhere; validation errors carry a JSON-pointer
to the offending element (e.g. /time/dt for a missing time step).
"""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

from .grid import GridSpec, WaveFunction1P, gaussian_packet
from .meanfield import SchemeParams
from .operators import CouplingOperator, PotentialSpec, cosine_symbol


class ConfigError(ValueError):
    def __init__(self, message, pointer=""):
        super().__init__(message)
        self.pointer = pointer


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "time", "physics", "meanfield", "nbody", "mc", "output"],
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "n", "box_length"],
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "n": {"type": "integer", "minimum": 4},
                "box_length": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T", "dt"],
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
            },
        },
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "required": ["L", "V", "H"],
            "properties": {
                "H": {"const": "laplacian"},
                "L": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"const": "multiplication"},
                        "symbol": {"enum": ["cos", "one"]},
                        "amplitude": {"type": "number"},
                        "mode": {"type": "integer", "minimum": 1},
                    },
                },
                "V": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["gaussian", "cosine", "zero"]},
                        "V0": {"type": "number"},
                        "sigma": {"type": "number", "exclusiveMinimum": 0},
                        "mode": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"const": "gaussian"},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "center": {"type": "number"},
            },
        },
        "meanfield": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode", "M"],
            "properties": {
                "mode": {"enum": ["picard", "ensemble"]},
                "M": {"type": "integer", "minimum": 1},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
            },
        },
        "nbody": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N_list"],
            "properties": {
                "N_list": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "integer", "minimum": 1},
                },
                "memory_budget_mb": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "required": ["repetitions", "master_seed"],
            "properties": {
                "repetitions": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["directory"],
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "sample_stride": {"type": "integer", "minimum": 1},
            },
        },
        "renormalize": {"type": "boolean"},
        "proptest": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "prodproj_samples": {"type": "integer", "minimum": 1},
                "hs_samples": {"type": "integer", "minimum": 1},
                "kolokoltsov_samples": {"type": "integer", "minimum": 1},
                "p3_samples": {"type": "integer", "minimum": 1},
                "norm_chain_samples": {"type": "integer", "minimum": 1},
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 64}},
            },
        },
    },
}

_DEFAULTS = {
    "meanfield": {"picard_tol": 1e-4, "max_iters": 20},
    "nbody": {"memory_budget_mb": 512.0},
    "output": {"sample_stride": 25},
    "initial": {"kind": "gaussian", "sigma": 0.7071067811865476, "center": 0.0},
    "physics.L": {"symbol": "cos", "amplitude": 1.0, "mode": 1},
    "physics.V": {"V0": 1.0, "sigma": 0.5, "mode": 1},
}


def _pointer(parts) -> str:
    return "/" + "/".join(str(p) for p in parts) if parts else ""


def validate_config(config: dict):
    """Raise ConfigError with a JSON pointer on the first schema violation."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    parts = list(err.absolute_path)
    if err.validator == "required":
        present = err.instance if isinstance(err.instance, dict) else {}
        missing = [k for k in err.validator_value if k not in present]
        if missing:
            parts = parts + [missing[0]]
    raise ConfigError(err.message, pointer=_pointer(parts))


def with_defaults(config: dict) -> dict:
    """Deep copy of the config with documented defaults filled in."""
    cfg = copy.deepcopy(config)
    cfg.setdefault("initial", dict(_DEFAULTS["initial"]))
    for key, val in _DEFAULTS["initial"].items():
        cfg["initial"].setdefault(key, val)
    for key, val in _DEFAULTS["meanfield"].items():
        cfg["meanfield"].setdefault(key, val)
    for key, val in _DEFAULTS["nbody"].items():
        cfg["nbody"].setdefault(key, val)
    for key, val in _DEFAULTS["output"].items():
        cfg["output"].setdefault(key, val)
    for key, val in _DEFAULTS["physics.L"].items():
        cfg["physics"]["L"].setdefault(key, val)
    if cfg["physics"]["V"]["kind"] != "zero":
        for key, val in _DEFAULTS["physics.V"].items():
            cfg["physics"]["V"].setdefault(key, val)
    cfg.setdefault("renormalize", True)
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    validate_config(raw)
    return with_defaults(raw)


def config_hash(config: dict) -> str:
    """Stable hash of the run-defining parts (output location excluded)."""
    core = {k: v for k, v in config.items() if k != "output"}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_grid(config: dict) -> GridSpec:
    g = config["grid"]
    return GridSpec(g["dim"], g["n"], float(g["box_length"]))


def build_coupling(grid: GridSpec, config: dict) -> CouplingOperator:
    spec = config["physics"]["L"]
    amp = float(spec["amplitude"])
    if spec["symbol"] == "cos":
        return CouplingOperator.multiplication(
            grid, cosine_symbol(grid, amp, mode=int(spec["mode"]))
        )
    return CouplingOperator.scalar(grid, amp)


def build_potential(grid: GridSpec, config: dict) -> PotentialSpec:
    spec = config["physics"]["V"]
    if spec["kind"] == "zero":
        return PotentialSpec.zero(grid)
    if spec["kind"] == "gaussian":
        return PotentialSpec.gaussian(grid, float(spec["V0"]), float(spec["sigma"]))
    return PotentialSpec.cosine(grid, float(spec["V0"]), int(spec["mode"]))


def build_initial(grid: GridSpec, config: dict) -> WaveFunction1P:
    spec = config["initial"]
    return gaussian_packet(grid, float(spec["sigma"]), center=float(spec["center"]))


def build_params(config: dict) -> SchemeParams:
    return SchemeParams(dt=float(config["time"]["dt"]),
                        renormalize=bool(config["renormalize"]))
