"""Experiment configuration: schema, defaults and conversion to runtime objects.

A config is one YAML (or JSON) mapping. ``kind`` selects the experiment and
only that kind's section is read. Unknown keys are schema errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import yaml

from .agent import AgentConfig
from .planner import PLANNER_DEFAULTS, CemConfig

KINDS = ("train", "regret", "theory")
SUITES = ("lemma1", "tv", "concentration", "variance_sum", "all")

# Episode lengths for the shipped tasks.
ENV_STEPS = {"cartpole": 200, "pendulum": 200}

_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}
_nonneg_num = {"type": "number", "minimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "psrl experiment config",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "seed"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "n_trials": _pos_int,
        "output_dir": {"type": "string"},
        "workers": _pos_int,
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["cartpole", "pendulum", "linear"]},
                "horizon": _pos_int,
                "noise_std": _nonneg_num,
                "d_s": _pos_int,
                "d_a": _pos_int,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "agent": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "episodes": _pos_int,
                "retrain_every": _pos_int,
                "hidden_layers": {
                    "oneOf": [{"type": "array", "items": _pos_int, "minItems": 1}, {"type": "null"}]
                },
                "penultimate_width": {"oneOf": [_pos_int, {"type": "null"}]},
                "activation": {"enum": ["swish", "tanh", "relu", "linear"]},
                "learning_rate": _pos_num,
                "batch_size": _pos_int,
                "train_epochs": _pos_int,
                "max_train_steps": _pos_int,
                "prior_scale": _pos_num,
                "transition_noise_var": {"oneOf": [_pos_num, {"type": "null"}]},
                "reward_noise_var": {"oneOf": [_pos_num, {"type": "null"}]},
            },
        },
        "cem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "popsize": _pos_int,
                "n_elites": _pos_int,
                "horizon": _pos_int,
                "max_iter": _pos_int,
                "n_particles": _pos_int,
                "init_std": {"oneOf": [_pos_num, {"type": "null"}]},
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "regret": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d_s": _pos_int,
                "d_a": _pos_int,
                "H_list": {"type": "array", "items": _pos_int, "minItems": 1},
                "T_max": _pos_int,
                "n_mdps": _pos_int,
                "n_rollouts": {"type": "integer", "minimum": 2},
                "known_mdp": {"type": "boolean"},
                "control_T": {"type": "integer", "minimum": 0},
                "transition_scale": _pos_num,
                "reward_scale": _pos_num,
                "sigma_f": _pos_num,
                "sigma_r": _pos_num,
                "n_states": {"type": "integer", "minimum": 2},
                "n_actions": _pos_int,
            },
        },
        "theory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "suite": {"enum": list(SUITES)},
                "cases": _pos_int,
                "n_trials": _pos_int,
                "episodes": {"type": "integer", "minimum": 2},
                "dims": {"type": "array", "items": _pos_int, "minItems": 1},
            },
        },
    },
}

DEFAULTS = {
    "train": {
        "kind": "train",
        "seed": 0,
        "n_trials": 1,
        "checkpoint_every": 5,
        "env": {"name": "cartpole"},
        "agent": {},
        "cem": {},
    },
    "regret": {
        "kind": "regret",
        "seed": 0,
        "regret": {
            "d_s": 1,
            "d_a": 1,
            "H_list": [10],
            "T_max": 20000,
            "n_mdps": 20,
            "n_rollouts": 5000,
            "known_mdp": False,
            "control_T": 1000,
        },
    },
    "theory": {"kind": "theory", "seed": 0, "theory": {"suite": "all", "cases": 1000}},
}


class ConfigError(ValueError):
    """Schema or semantic violation, reported with the offending field path."""


def _field_path(error: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in error.absolute_path) or "<root>"


def validate(config: dict) -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_field_path(e)}: {e.message}" for e in errors))
    if config["kind"] == "train" and "env" not in config:
        raise ConfigError("env: required for kind 'train'")
    cem = config.get("cem", {})
    if "popsize" in cem and "n_elites" in cem and cem["n_elites"] > cem["popsize"]:
        raise ConfigError("cem/n_elites: must not exceed cem/popsize")
    return config


def load(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    return validate(data)


def default_config(kind: str) -> dict:
    if kind not in DEFAULTS:
        raise ConfigError(f"kind: unknown experiment kind {kind!r}")
    return copy.deepcopy(DEFAULTS[kind])


def canonical_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def env_kwargs(config: dict) -> dict:
    env = dict(config["env"])
    name = env.pop("name")
    if name != "linear" and "horizon" not in env:
        env["horizon"] = ENV_STEPS[name]
    return {"name": name, **env}


def cem_config(config: dict) -> CemConfig:
    return CemConfig.for_env(config["env"]["name"], **config.get("cem", {}))


def agent_config(config: dict, seed: int) -> AgentConfig:
    agent = dict(config.get("agent", {}))
    if "hidden_layers" in agent and agent["hidden_layers"] is not None:
        agent["hidden_layers"] = tuple(agent["hidden_layers"])
    return AgentConfig(cem=cem_config(config), seed=seed, **agent)


__all__ = [
    "ConfigError",
    "DEFAULTS",
    "KINDS",
    "SCHEMA",
    "SUITES",
    "PLANNER_DEFAULTS",
    "agent_config",
    "canonical_hash",
    "default_config",
    "env_kwargs",
    "load",
    "validate",
]
