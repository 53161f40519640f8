"""Experiment configuration: flat ``key = value`` documents with dotted keys.

Example::

    env = cartpole
    variant = arise,ppo
    seeds = 0,1,2,3,4
    arise.alpha = 0.12
    ppo.learning_rate = 3e-4
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .envs import ConfigError, parse_env_id
from .orchestrator import AriseConfig
from .ppo import PPOConfig

VARIANTS = ("arise", "arise_no_adaptive", "arise_no_swarm", "arise_no_novelty", "arise_no_broadcast", "ppo")


@dataclass
class ExperimentConfig:
    envs: list[str] = field(default_factory=lambda: ["cartpole"])
    variants: list[str] = field(default_factory=lambda: ["arise"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    arise: AriseConfig = field(default_factory=AriseConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    out: str = "runs"
    checkpoint: bool = True
    log_wall_time: bool = False

    @property
    def eval_interval(self) -> int:
        return self.arise.eval_interval


def apply_variant(cfg: AriseConfig, variant: str) -> AriseConfig:
    """Ablation flags for a named variant. ``ppo`` is ARISE stripped to one plain agent."""
    if variant == "arise":
        return replace(cfg)
    if variant == "arise_no_adaptive":
        return replace(cfg, no_adaptive=True)
    if variant == "arise_no_swarm":
        return replace(cfg, no_swarm=True, num_agents=1)
    if variant == "arise_no_novelty":
        return replace(cfg, no_novelty=True)
    if variant == "arise_no_broadcast":
        return replace(cfg, no_broadcast=True)
    if variant == "ppo":
        return replace(cfg, num_agents=1, alpha=0.0, beta=0.0, no_swarm=True, no_broadcast=True, no_adaptive=True)
    raise ConfigError(f"variant: unknown value {variant!r}; choose from {', '.join(VARIANTS)}")


_TOP_KEYS = {"env": "envs", "envs": "envs", "variant": "variants", "variants": "variants",
             "seeds": "seeds", "out": "out", "checkpoint": "checkpoint", "log_wall_time": "log_wall_time",
             "eval_interval": "arise.eval_interval"}


def _convert(key: str, raw: str, typ):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    try:
        if origin in (typing.Union, types.UnionType):
            inner = [a for a in args if a is not type(None)][0]
            if raw.lower() in ("", "none", "null"):
                return None
            return _convert(key, raw, inner)
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if typ is tuple or origin is tuple:
            return tuple(float(v) if "." in v or "e" in v.lower() else int(v) for v in raw.split(","))
        if origin is list:
            item = args[0]
            return [_convert(key, v, item) for v in raw.split(",") if v.strip()]
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc
    raise ConfigError(f"{key}: unsupported type {typ}")


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_lines(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(pairs: dict[str, str]) -> ExperimentConfig:
    """Fill an ExperimentConfig from string pairs; unknown keys are rejected."""
    top: dict = {}
    arise_kw: dict = {}
    ppo_kw: dict = {}
    top_types = _field_types(ExperimentConfig)
    arise_types = _field_types(AriseConfig)
    ppo_types = _field_types(PPOConfig)
    for key, raw in pairs.items():
        target = _TOP_KEYS.get(key, key)
        section, _, name = target.partition(".")
        if not name:
            section, name = "", target
        if section == "" and name in top_types and name not in ("arise", "ppo"):
            top[name] = _convert(key, raw, top_types[name])
        elif section == "arise" and name in arise_types and name != "seed":
            arise_kw[name] = _convert(key, raw, arise_types[name])
        elif section == "ppo" and name in ppo_types:
            ppo_kw[name] = _convert(key, raw, ppo_types[name])
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    cfg = ExperimentConfig(**top, arise=AriseConfig(**arise_kw), ppo=PPOConfig(**ppo_kw))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.seeds:
        raise ConfigError("seeds: at least one seed is required")
    if not cfg.envs or not cfg.variants:
        raise ConfigError("env/variant: at least one value is required")
    for env_id in cfg.envs:
        try:
            parse_env_id(env_id)
        except ConfigError as exc:
            raise ConfigError(f"env: {exc}") from exc
    for v in cfg.variants:
        try:
            apply_variant(cfg.arise, v).validate()
        except ValueError as exc:
            raise ConfigError(f"arise ({v}): {exc}") from exc
    try:
        cfg.ppo.validate()
    except ValueError as exc:
        raise ConfigError(f"ppo: {exc}") from exc


def parse_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read a config file (optional) and apply flag overrides on top."""
    pairs: dict[str, str] = {}
    if path is not None:
        try:
            pairs.update(parse_lines(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            pairs[k] = v
    return build_config(pairs)


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of ``parse_lines`` for the effective configuration."""
    lines = [f"env = {','.join(cfg.envs)}", f"variant = {','.join(cfg.variants)}",
             f"seeds = {','.join(map(str, cfg.seeds))}", f"out = {cfg.out}",
             f"checkpoint = {str(cfg.checkpoint).lower()}", f"log_wall_time = {str(cfg.log_wall_time).lower()}"]
    for prefix, obj in (("arise", cfg.arise), ("ppo", cfg.ppo)):
        for f in dataclasses.fields(obj):
            if prefix == "arise" and f.name == "seed":
                continue
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = str(v).lower()
            elif v is None:
                v = "none"
            lines.append(f"{prefix}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
