"""Run configuration: YAML file validated against a JSON schema.

All quantities are in atomic units. Reciprocal vectors are given by their
integer coordinates on the dual basis. A minimal 1D configuration::

    dimension: 1
    lattice: [[2.0]]
    potential:
      kind: cosine
      terms: [{K: [1], value: 0.5}]
    n_electrons: 1
    e_cut: 20.0
    bz_grid: [9]
"""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema
import numpy as np
import yaml

from .errors import ConfigError

_MODE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["K", "value"],
    "properties": {
        "K": {"type": "array", "items": {"type": "integer"}, "minItems": 1, "maxItems": 3},
        "value": {"type": "number"},
    },
}

_DRIVE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mode", "amplitude"],
    "properties": {
        "mode": {"type": "array", "items": {"type": "integer"}, "minItems": 1, "maxItems": 3},
        "amplitude": {"type": "number"},
        "shape": {"enum": ["sinusoid", "pulse", "constant"]},
        "omega": {"type": "number"},
        "ramp": {"type": "number", "minimum": 0},
        "center": {"type": "number"},
        "width": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["dimension", "lattice", "potential", "n_electrons", "e_cut", "bz_grid"],
    "properties": {
        "dimension": {"type": "integer", "minimum": 1, "maximum": 3},
        "lattice": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3},
            "minItems": 1,
            "maxItems": 3,
        },
        "potential": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cosine", "scf"]},
                "terms": {"type": "array", "items": _MODE},
                "nuclear": {"type": "array", "items": _MODE},
                "mixing": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "n_electrons": {"type": "integer", "minimum": 1},
        "e_cut": {"type": "number", "exclusiveMinimum": 0},
        "bz_grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1, "maxItems": 3},
        "response": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omegas": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "eta": {"type": "number", "minimum": 0},
                "q": {"type": "array", "items": {"type": "number"}},
                "k_cut": {"type": "number", "minimum": 0},
            },
        },
        "epsm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_omega": {"type": "integer", "minimum": 1},
                "window": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_cells": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "drive": {"type": "array", "items": _DRIVE},
            },
        },
        "output": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
}

DEFAULTS = {
    "response": {"omegas": [0.0], "eta": 0.0, "k_cut": None, "q": None},
    "epsm": {"n_omega": 21, "window": 0.8},
    "dynamics": {"n_cells": None, "dt": 0.05, "t_final": 10.0, "picard_tol": 1e-13, "drive": []},
    "threads": 1,
    "output": "out",
}


def validate_config(cfg: dict) -> dict:
    """Validate, cross-check and fill defaults; raises ``ConfigError``."""
    if not isinstance(cfg, dict) or not cfg:
        raise ConfigError("configuration is empty")
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    d = cfg["dimension"]
    lat = np.asarray(cfg["lattice"], dtype=float)
    if lat.shape != (d, d):
        raise ConfigError(f"lattice must be {d}x{d}, got shape {lat.shape}")
    if len(cfg["bz_grid"]) != d:
        raise ConfigError("bz_grid needs one count per dimension")
    pot = cfg["potential"]
    key = "terms" if pot["kind"] == "cosine" else "nuclear"
    for mode in pot.get(key, []):
        if len(mode["K"]) != d:
            raise ConfigError(f"potential mode {mode['K']} has the wrong dimension")
    if pot["kind"] == "scf" and "nuclear" not in pot:
        raise ConfigError("scf potentials need a 'nuclear' list")
    out = copy.deepcopy(cfg)
    for k, v in DEFAULTS.items():
        if isinstance(v, dict):
            merged = dict(v)
            merged.update(out.get(k, {}))
            out[k] = merged
        else:
            out.setdefault(k, v)
    if out["response"]["q"] is None:
        out["response"]["q"] = [0.0] * d
    if len(out["response"]["q"]) != d:
        raise ConfigError("response.q needs one coordinate per dimension")
    if out["dynamics"]["n_cells"] is None:
        out["dynamics"]["n_cells"] = [1] * d
    for drv in out["dynamics"]["drive"]:
        if len(drv["mode"]) != d:
            raise ConfigError(f"drive mode {drv['mode']} has the wrong dimension")
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()
