"""JSON run configuration: one section per subsystem, every key optional."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .curation import CurationConfig
from .grpo import GrpoConfig
from .reward import RewardConfig
from .sim_env import EnvConfig
from .tokens import TokenModel


class ConfigError(ValueError):
    pass


@dataclass
class SftConfig:
    n_samples: int = 2000
    lr: float = 1.0
    steps: int = 2000
    call_weight: float = 5.0
    l2: float = 0.05


@dataclass
class EvalConfig:
    episodes: int = 10000
    greedy: bool = False


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    curation: CurationConfig = field(default_factory=CurationConfig)
    tokens: TokenModel = field(default_factory=TokenModel)
    eval: EvalConfig = field(default_factory=EvalConfig)
    endpoints: dict = field(default_factory=dict)


_SECTIONS = {"env": EnvConfig, "reward": RewardConfig, "grpo": GrpoConfig, "sft": SftConfig,
             "curation": CurationConfig, "tokens": TokenModel, "eval": EvalConfig}


def _build(section: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    known = {f.name for f in fields(cls) if f.repr}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key '{section}.{key}'")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config section '{section}': {e}") from e


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    cfg = RunConfig()
    for key, val in doc.items():
        if key == "endpoints":
            if not isinstance(val, dict):
                raise ConfigError("config section 'endpoints' must be an object")
            cfg.endpoints = dict(val)
        elif key in _SECTIONS:
            setattr(cfg, key, _build(key, _SECTIONS[key], val))
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return parse_config(doc)


def require(mapping: dict, key: str, where: str):
    if key not in mapping or mapping[key] in (None, ""):
        raise ConfigError(f"missing config key '{where}.{key}'")
    return mapping[key]
