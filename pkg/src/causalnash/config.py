"""Game configuration files: schema, defaults, and conversion to solver objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .cot import CotConfig
from .entropic_ot import SinkhornConfig
from .errors import InputError
from .path_space import MarkovSpec, PathMeasure, PathSpace, markov_to_measure
from .potential_game import (AttractiveEnergy, EquilibriumConfig, PotentialGame, QuadraticEnergy,
                             RepulsiveEnergy)

SCHEMA_VERSION = 1

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1}
_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_alphabet = {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1,
             "uniqueItems": True}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "x_alphabet", "y_alphabet", "horizon", "eta", "cost_f", "energy"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "x_alphabet": _alphabet,
        "y_alphabet": _alphabet,
        "horizon": {"type": "integer", "minimum": 1},
        "eta": {
            "oneOf": [
                {
                    "type": "object", "additionalProperties": False, "required": ["markov"],
                    "properties": {"markov": {
                        "type": "object", "additionalProperties": False, "required": ["initial"],
                        "properties": {
                            "initial": _vector,
                            "stay_probability": {"type": "number", "minimum": 0, "maximum": 1},
                            "transitions": {"type": "array", "items": _matrix},
                        },
                        "oneOf": [{"required": ["stay_probability"]}, {"required": ["transitions"]}],
                    }},
                },
                {
                    "type": "object", "additionalProperties": False, "required": ["paths"],
                    "properties": {"paths": _vector},
                },
            ]
        },
        "cost_f": _matrix,
        "energy": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["quadratic"],
                 "properties": {"quadratic": {
                     "type": "object", "additionalProperties": False, "required": ["A"],
                     "properties": {"A": _matrix}}}},
                {"type": "object", "additionalProperties": False, "required": ["repulsive"],
                 "properties": {"repulsive": {
                     "type": "object", "additionalProperties": False, "required": ["reference", "c"],
                     "properties": {"reference": _vector,
                                    "c": {"oneOf": [{"type": "number"}, _vector]},
                                    "q": {"type": "number", "minimum": 0}}}}},
                {"type": "object", "additionalProperties": False, "required": ["attractive"],
                 "properties": {"attractive": {
                     "type": "object", "additionalProperties": False, "required": ["kernel"],
                     "properties": {"kernel": _matrix}}}},
            ]
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "stationarity_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "gradient_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "marginal_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "minimum": 1},
                "step_rule": {"enum": ["newton", "gradient"]},
                "cot_step_rule": {"enum": ["newton", "lbfgs", "backtracking", "fixed"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}

SOLVER_DEFAULTS = {
    "epsilon": 0.01,
    "delta": 1.0,
    "stationarity_tolerance": 1e-5,
    "gradient_tolerance": 1e-7,
    "marginal_tolerance": 1e-12,
    "max_iterations": 5000,
    "step_rule": "newton",
    "cot_step_rule": "newton",
    "seed": 0,
}


class ConfigError(InputError):
    """Invalid configuration; ``where`` names the offending field or line."""

    def __init__(self, message, where=""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def _field_path(path) -> str:
    return "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in path).lstrip(".") or "<root>"


@dataclass(frozen=True)
class GameConfig:
    """A validated configuration with all solver defaults filled in."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> GameConfig:
        validator = jsonschema.Draft202012Validator(SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            e = errors[0]
            raise ConfigError(e.message, _field_path(e.absolute_path))
        data = copy.deepcopy(raw)
        data["solver"] = {**SOLVER_DEFAULTS, **data.get("solver", {})}
        cfg = cls(data)
        cfg.game()  # shape and probability checks
        return cfg

    @classmethod
    def from_json(cls, text: str) -> GameConfig:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, f"line {e.lineno} column {e.colno}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2)

    @property
    def solver(self) -> dict:
        return self.data["solver"]

    @property
    def stay_probability(self) -> float | None:
        return self.data["eta"].get("markov", {}).get("stay_probability")

    def with_stay_probability(self, p: float) -> GameConfig:
        if self.stay_probability is None:
            raise ConfigError("eta is not a symmetric Markov chain, so p cannot be varied", "eta.markov")
        data = self.to_dict()
        data["eta"]["markov"]["stay_probability"] = float(p)
        return GameConfig.from_dict(data)

    def with_solver(self, **changes) -> GameConfig:
        data = self.to_dict()
        data["solver"].update(changes)
        return GameConfig.from_dict(data)

    def x_space(self) -> PathSpace:
        return PathSpace(len(self.data["x_alphabet"]), self.data["horizon"], self.data["x_alphabet"])

    def y_space(self) -> PathSpace:
        return PathSpace(len(self.data["y_alphabet"]), self.data["horizon"], self.data["y_alphabet"])

    def eta(self) -> PathMeasure:
        xs = self.x_space()
        spec = self.data["eta"]
        try:
            if "paths" in spec:
                return PathMeasure(xs, np.asarray(spec["paths"], float), atol=1e-9)
            mk = spec["markov"]
            if "stay_probability" in mk:
                chain = MarkovSpec.symmetric(mk["initial"], mk["stay_probability"], xs.horizon)
            else:
                chain = MarkovSpec(np.asarray(mk["initial"], float),
                                   tuple(np.asarray(P, float) for P in mk["transitions"]))
            if chain.initial.size != xs.alphabet_size or chain.horizon != xs.horizon:
                raise InputError(f"Markov chain has {chain.initial.size} states and horizon "
                                 f"{chain.horizon}; expected {xs.alphabet_size} and {xs.horizon}")
            return markov_to_measure(chain, xs.labels)
        except InputError as e:
            raise ConfigError(str(e), "eta") from None

    def energy(self):
        spec = self.data["energy"]
        try:
            if "quadratic" in spec:
                return QuadraticEnergy(np.asarray(spec["quadratic"]["A"], float))
            if "attractive" in spec:
                return AttractiveEnergy(np.asarray(spec["attractive"]["kernel"], float))
            r = spec["repulsive"]
            return RepulsiveEnergy(np.asarray(r["reference"], float), np.asarray(r["c"], float),
                                   r.get("q", 1.0))
        except (InputError, ValueError) as e:
            raise ConfigError(str(e), "energy") from None

    def game(self) -> PotentialGame:
        xs, ys = self.x_space(), self.y_space()
        try:
            f = np.asarray(self.data["cost_f"], float)
        except ValueError:
            raise ConfigError("cost_f rows have different lengths", "cost_f") from None
        if f.shape != (xs.size, ys.size):
            raise ConfigError(f"shape {f.shape}, expected ({xs.size}, {ys.size}) "
                              f"(rows: x-paths, columns: y-paths, lexicographic)", "cost_f")
        eta = self.eta()
        energy = self.energy()
        if energy.size != ys.size:
            raise ConfigError(f"acts on {energy.size} points, expected {ys.size} y-paths", "energy")
        return PotentialGame(eta, ys, f, energy)

    def equilibrium_config(self) -> EquilibriumConfig:
        s = self.solver
        sink = SinkhornConfig(epsilon=s["epsilon"], marginal_tolerance=s["marginal_tolerance"])
        cot = CotConfig(sinkhorn=sink, gradient_tolerance=s["gradient_tolerance"],
                        step_rule=s["cot_step_rule"], seed=s["seed"])
        return EquilibriumConfig(cot=cot, step_rule=s["step_rule"], delta=s["delta"],
                                 stationarity_tolerance=s["stationarity_tolerance"],
                                 max_iterations=s["max_iterations"])


def load_config(path) -> GameConfig:
    """Read a configuration file; ``congestion`` names the bundled example."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_names():
        return GameConfig.from_json(bundled_text(str(path)))
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(str(e.strerror or e), str(path)) from None
    return GameConfig.from_json(text)


def bundled_names() -> list[str]:
    return sorted(r.name[:-5] for r in resources.files("causalnash.data").iterdir()
                  if r.name.endswith(".json"))


def bundled_text(name: str) -> str:
    return resources.files("causalnash.data").joinpath(f"{name}.json").read_text()
