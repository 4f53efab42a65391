"""Experiment configuration: JSON schema, loading and object construction.

Paths inside a config are resolved relative to the config file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .core import LinearSystem
from .diststats import DisturbanceModel
from .simulator import DisturbanceGen, GEN_KINDS, chain_adjacency, make_chain_plant
from .synthesis import LocalityMask, SafetySpec, build_locality_mask

CONFIG_SCHEMA_ID = "slsblend.experiment/1"

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1}
_weight = {"oneOf": [_matrix, {"type": "number", "exclusiveMinimum": 0}, {"const": "identity"}]}
_posnum = {"type": "number", "exclusiveMinimum": 0}
_bound = {"oneOf": [_posnum, {"const": "inf"}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "plant", "synthesis"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": CONFIG_SCHEMA_ID},
        "name": {"type": "string"},
        "plant": {
            "oneOf": [
                {"type": "object", "required": ["A", "B"], "additionalProperties": False,
                 "properties": {"A": _matrix, "B": _matrix}},
                {"type": "object", "required": ["chain"], "additionalProperties": False,
                 "properties": {"chain": {
                     "type": "object", "required": ["nodes"], "additionalProperties": False,
                     "properties": {
                         "nodes": {"type": "integer", "minimum": 2},
                         "coupling": {"type": "number"},
                         "actuation": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                     }}}},
            ]
        },
        "synthesis": {
            "type": "object",
            "required": ["T", "radii", "distribution", "safety"],
            "additionalProperties": False,
            "properties": {
                "T": {"type": "integer", "minimum": 2},
                "radii": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "Q": _weight,
                "P": _weight,
                "distribution": {
                    "type": "object", "required": ["family"], "additionalProperties": False,
                    "properties": {
                        "family": {"enum": ["uniform", "truncated-gaussian", "point-mass-augmented", "point-mass-list"]},
                        "sigma": _posnum,
                        "values": {"type": "array", "items": {"type": "number"}},
                        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                },
                "safety": {
                    "type": "object", "required": ["x_max", "u_max"], "additionalProperties": False,
                    "properties": {"x_max": _bound, "u_max": _bound},
                },
                "locality": {
                    "type": "object", "required": ["d", "comm_delay"], "additionalProperties": False,
                    "properties": {
                        "d": {"type": "integer", "minimum": 0},
                        "comm_delay": {"type": "number", "minimum": 0},
                        "act_delay": {"type": "integer", "minimum": 0},
                    },
                },
                "projection": {"enum": ["saturation", "radial"]},
                "closure": {"enum": ["general", "strict"]},
                "integral": {
                    "type": "object", "required": ["zone"], "additionalProperties": False,
                    "properties": {
                        "zone": {"type": "integer", "minimum": 1},
                        "columns": {"oneOf": [{"const": "actuated"},
                                              {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
                    },
                },
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "controller": {"enum": ["sl", "anti-windup", "integral"]},
                "tau": {"type": "integer", "minimum": 0},
                "gains": {"type": "object", "additionalProperties": False,
                          "properties": {"kp": {"type": "number"}, "ki": {"type": "number"}}},
                "generator": {
                    "type": "object", "required": ["kind"], "additionalProperties": False,
                    "properties": {"kind": {"enum": list(GEN_KINDS)}, "params": {"type": "object"}},
                },
                "horizon": {"type": "integer", "minimum": 1},
                "trajectories": {"type": "integer", "minimum": 1},
                "burn_in": {"type": "integer", "minimum": 0},
                "saturate": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "sweep": {
            "type": "object", "required": ["var", "grid"], "additionalProperties": False,
            "properties": {"var": {"enum": ["sigma", "eta_1"]},
                           "grid": {"type": "array", "items": {"type": "number"}, "minItems": 1}},
        },
        "outputs": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in ("clm", "trajectory", "summary", "sweep", "compare")},
        },
    },
}


class ConfigError(ValueError):
    pass


def _path_of(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(doc: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"config invalid at {_path_of(e)}: {e.message}")


def _weight_matrix(spec, size: int) -> np.ndarray:
    if spec is None or spec == "identity":
        return np.eye(size)
    if isinstance(spec, (int, float)):
        return float(spec) * np.eye(size)
    W = np.atleast_2d(np.asarray(spec, dtype=float))
    if W.shape != (size, size):
        raise ConfigError(f"weight must be {size} x {size}, got {W.shape}")
    return W


def _bound_value(v) -> float:
    return np.inf if v == "inf" else float(v)


@dataclass
class Experiment:
    doc: dict
    base: Path

    @property
    def syn(self) -> dict:
        return self.doc["synthesis"]

    @property
    def sim(self) -> dict:
        return self.doc.get("simulation", {})

    def plant(self) -> LinearSystem:
        p = self.doc["plant"]
        if "chain" in p:
            c = p["chain"]
            return make_chain_plant(c["nodes"], c.get("coupling", 0.4), c.get("actuation"))
        return LinearSystem(p["A"], p["B"])

    def adjacency(self) -> np.ndarray:
        p = self.doc["plant"]
        if "chain" in p:
            return chain_adjacency(p["chain"]["nodes"])
        A = np.asarray(p["A"], dtype=float)
        adj = (A != 0).astype(int)
        adj = ((adj + adj.T) > 0).astype(int)
        np.fill_diagonal(adj, 0)
        return adj

    def actuation(self) -> list[int]:
        from .simulator import actuated_nodes
        return actuated_nodes(self.plant())

    @property
    def radii(self) -> tuple:
        return tuple(float(r) for r in self.syn["radii"])

    @property
    def eta_max(self) -> float:
        return self.radii[-1]

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        pl = self.plant()
        return _weight_matrix(self.syn.get("Q"), pl.n), _weight_matrix(self.syn.get("P"), pl.m)

    def distribution(self, sigma: float | None = None) -> DisturbanceModel:
        d = dict(self.syn["distribution"])
        if sigma is not None:
            d["sigma"] = sigma
        try:
            return DisturbanceModel.from_dict({"eta_max": self.eta_max, **d})
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"config invalid at synthesis/distribution: {exc}") from exc

    def safety(self) -> SafetySpec:
        s = self.syn["safety"]
        return SafetySpec(_bound_value(s["x_max"]), _bound_value(s["u_max"]), self.eta_max)

    def mask(self) -> LocalityMask | None:
        loc = self.syn.get("locality")
        if loc is None:
            return None
        return build_locality_mask(self.adjacency(), loc["d"], loc["comm_delay"], self.actuation(),
                                   self.syn["T"], loc.get("act_delay", 0))

    def integral(self) -> dict | None:
        spec = self.syn.get("integral")
        if spec is None:
            return None
        cols = spec.get("columns", "actuated")
        cols = self.actuation() if cols == "actuated" else [int(c) for c in cols]
        return {int(spec["zone"]) - 1: cols}

    def generator(self) -> DisturbanceGen:
        g = self.sim.get("generator", {"kind": "impulse"})
        params = dict(g.get("params", {}))
        if g["kind"] in ("iid-truncated-gaussian", "worst-case-bang"):
            params.setdefault("eta_max", self.eta_max)
        if g["kind"] == "iid-truncated-gaussian" and "sigma" not in params:
            params["sigma"] = self.syn["distribution"].get("sigma", 1.0)
        if g["kind"] == "worst-case-bang":
            params.setdefault("period", 2 * self.syn["T"])
        if g["kind"] == "custom-sequence" and isinstance(params.get("values"), str):
            params["values"] = np.loadtxt(self.resolve(params["values"]), delimiter=",", ndmin=2)
        try:
            return DisturbanceGen(g["kind"], params)
        except ValueError as exc:
            raise ConfigError(f"config invalid at simulation/generator: {exc}") from exc

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base / p

    def output(self, key: str, default: str) -> Path:
        return self.resolve(self.doc.get("outputs", {}).get(key, default))


def load_config(path) -> Experiment:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(doc)
    exp = Experiment(doc, path.resolve().parent)
    radii = exp.radii
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ConfigError("config invalid at synthesis/radii: radii must be nondecreasing")
    try:
        exp.plant()
    except ValueError as exc:
        raise ConfigError(f"config invalid at plant: {exc}") from exc
    return exp
