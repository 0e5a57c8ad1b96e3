"""Run configuration: one JSON document naming the method, env, proxy
reward, labeler, trainer fields, and seed.

Validation is strict: unknown keys and wrong types are rejected with the
offending path (e.g. "trainer.batch_size: expected int"), which the CLI
surfaces as exit code 2.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .envs import (
    GridworldConfig,
    GridworldEnv,
    HighwayConfig,
    HighwayEnv,
    ProxyRewardConfig,
    resolve_proxy,
)
from .exceptions import ConfigurationError
from .trainer import METHODS, TrainerConfig

KNOWN_METHODS = sorted(METHODS) + ["bc", "rainbow_lite"]

LABELER_KEYS = {
    "type": str,
    "checkpoint": str,
    "n_cf": int,
    "p": float,
    "epsilon": float,
    "pass_threshold": float,
}


def _type_name(t) -> str:
    return {int: "int", float: "number", str: "string", bool: "bool"}[t]


def _check(doc: dict, path: str, allowed: dict) -> None:
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigurationError(
                f"{path}.{key}: unknown key (allowed: "
                f"{', '.join(sorted(allowed))})")
        want = allowed[key]
        if want is float:
            ok = isinstance(value, (int, float)) and not isinstance(
                value, bool)
        elif want is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, want)
        if not ok:
            raise ConfigurationError(
                f"{path}.{key}: expected {_type_name(want)}, "
                f"got {type(value).__name__}")


def _dataclass_fields(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        out[f.name] = f.type if isinstance(f.type, type) else \
            {"int": int, "float": float, "str": str, "bool": bool}[f.type]
    return out


@dataclass
class RunConfig:
    method: str
    seed: int
    env_kind: str
    env: object                      # HighwayConfig | GridworldConfig
    proxy: ProxyRewardConfig | None
    labeler: dict | None
    trainer: TrainerConfig
    raw: dict

    def env_factory(self):
        if self.env_kind == "highway":
            cfg, proxy = self.env, self.proxy
            return lambda: HighwayEnv(cfg, proxy)
        cfg = self.env
        return lambda: GridworldEnv(cfg)

    def snapshot(self) -> dict:
        doc = dict(self.raw)
        doc["seed"] = self.seed
        return doc


def validate_run_config(doc: dict, path: str = "config") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    top = {"method": str, "seed": int, "env": dict, "proxy": (str, dict),
           "labeler": dict, "trainer": dict}
    for key in doc:
        if key not in top:
            raise ConfigurationError(
                f"{path}.{key}: unknown key (allowed: "
                f"{', '.join(sorted(top))})")
    method = doc.get("method", "icopro")
    if not isinstance(method, str) or method not in KNOWN_METHODS:
        raise ConfigurationError(
            f"{path}.method: expected one of {KNOWN_METHODS}, got "
            f"{method!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError(f"{path}.seed: expected a non-negative "
                                 "int")

    env_doc = dict(doc.get("env", {}))
    if not isinstance(doc.get("env", {}), dict):
        raise ConfigurationError(f"{path}.env: expected a JSON object")
    kind = env_doc.pop("kind", "highway")
    if kind == "highway":
        fields = _dataclass_fields(HighwayConfig)
        _check(env_doc, f"{path}.env", fields)
        try:
            env_cfg = HighwayConfig(**env_doc)
        except ConfigurationError as e:
            raise ConfigurationError(f"{path}.env: {e}") from None
    elif kind == "gridworld":
        fields = _dataclass_fields(GridworldConfig)
        _check(env_doc, f"{path}.env", fields)
        try:
            env_cfg = GridworldConfig(**env_doc)
        except ConfigurationError as e:
            raise ConfigurationError(f"{path}.env: {e}") from None
    else:
        raise ConfigurationError(
            f"{path}.env.kind: expected 'highway' or 'gridworld', got "
            f"{kind!r}")

    proxy = None
    if "proxy" in doc:
        if kind != "highway":
            raise ConfigurationError(
                f"{path}.proxy: proxy rewards only apply to the highway "
                "env")
        try:
            proxy = resolve_proxy(doc["proxy"])
        except ConfigurationError as e:
            raise ConfigurationError(f"{path}.proxy: {e}") from None

    labeler = None
    if "labeler" in doc:
        _check(doc["labeler"], f"{path}.labeler", LABELER_KEYS)
        labeler = dict(doc["labeler"])
        if "type" not in labeler:
            raise ConfigurationError(f"{path}.labeler.type: required")

    trainer_doc = doc.get("trainer", {})
    fields = _dataclass_fields(TrainerConfig)
    _check(trainer_doc, f"{path}.trainer", fields)
    try:
        trainer = TrainerConfig(**trainer_doc)
    except ConfigurationError as e:
        raise ConfigurationError(f"{path}.trainer: {e}") from None

    needs_labeler = method in METHODS  # interactive loop methods
    if needs_labeler and labeler is None:
        raise ConfigurationError(
            f"{path}.labeler: required for method {method!r}")

    return RunConfig(method=method, seed=seed, env_kind=kind, env=env_cfg,
                     proxy=proxy, labeler=labeler, trainer=trainer,
                     raw=doc)


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") \
            from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
    return validate_run_config(doc)
