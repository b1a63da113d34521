"""Flat dotted-key run configuration shared by every CLI command.

A config file is a JSON object such as ``{"train.epochs": 40, "loss.delta": 1.5}``.
Unknown keys are rejected. Defaults come from the module dataclasses.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .data import GenConfig
from .decision import VerificationPolicy
from .loss import LossConfig
from .model import ModelSpec, TrainConfig


class ConfigError(ValueError):
    pass


CALIB_DEFAULTS = {"target_fpr": 0.005, "bucket_width": 5.0, "side_split": 0.5, "min_bucket_n": 50}


def _section(cls, prefix, skip=()):
    return {f"{prefix}.{f.name}": f.default for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "seed": 0,
    **_section(GenConfig, "gen", skip=("seed",)),
    **_section(ModelSpec, "model", skip=("input_dim",)),
    **_section(TrainConfig, "train", skip=("seed",)),
    **_section(LossConfig, "loss"),
    **{f"calib.{k}": v for k, v in CALIB_DEFAULTS.items()},
    **_section(VerificationPolicy, "policy"),
}


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        return tuple(value)
    if isinstance(default, bool) or isinstance(default, str):
        if not isinstance(value, type(default)):
            raise ConfigError(f"{key} must be a {type(default).__name__}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    return value


def resolve(file_values=None, overrides=None) -> dict:
    """Defaults, then file values, then non-None overrides."""
    cfg = dict(DEFAULTS)
    for source in (file_values or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    return cfg


def load(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key in doc:
        if key not in DEFAULTS:
            raise ConfigError(f"{path}: unknown config key {key!r}")
    return doc


def section(cfg: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def gen_config(cfg, n=None) -> GenConfig:
    s = section(cfg, "gen")
    if n is not None:
        s["n"] = n
    return GenConfig(seed=cfg["seed"], **s)


def model_spec(cfg, input_dim) -> ModelSpec:
    return ModelSpec(input_dim=input_dim, **section(cfg, "model"))


def train_config(cfg) -> TrainConfig:
    return TrainConfig(seed=cfg["seed"], **section(cfg, "train"))


def loss_config(cfg) -> LossConfig:
    return LossConfig(**section(cfg, "loss"))


def policy(cfg, method=None) -> VerificationPolicy:
    s = section(cfg, "policy")
    if method is not None:
        s["method"] = method
    return VerificationPolicy(**s)


def to_json_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(cfg.items())}
