"""Run configuration: a YAML file mapped onto dataclasses.

Every section is optional; unknown keys anywhere are rejected so a typo
cannot silently fall back to a default. Dotted overrides such as
``evolution.max_generations=1`` are applied to the raw mapping before
validation, with values parsed as YAML scalars.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .baselines import BaselineParams
from .datasets import BENCHMARK_DATASETS, DEFAULT_COLUMN_ORDER
from .errors import TrajforgeError
from .evolution import EvolutionConfig
from .runtime import DEFAULT_PROFILES, ExecLimits, InterpreterProfile

DATA_ENV = "TRAJFORGE_DATA"
DEFAULT_DATA_ROOT = "data/eth_ucy"


class ConfigError(TrajforgeError):
    pass


@dataclass(frozen=True)
class DataConfig:
    root: str = ""
    datasets: tuple[str, ...] = BENCHMARK_DATASETS
    held_out: str = "zara1"
    train_stride: int = 1
    test_stride: int = 20
    column_order: tuple[str, ...] = DEFAULT_COLUMN_ORDER

    def resolved_root(self) -> Path:
        return Path(self.root or os.environ.get(DATA_ENV, DEFAULT_DATA_ROOT))


@dataclass(frozen=True)
class GatewayConfig:
    provider: str = "mock"  # mock | openai
    base_url: str = "https://api.openai.com/v1"
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    max_attempts: int = 3
    backoff: float = 1.0
    max_in_flight: int = 2
    send_seed: bool = False
    mock_seed: int = 0
    script: tuple[str, ...] | None = None


@dataclass(frozen=True)
class OutputConfig:
    runs_dir: str = "runs"
    run_id: str = ""


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    limits: ExecLimits = field(default_factory=ExecLimits)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    baselines: BaselineParams = field(default_factory=BaselineParams)
    output: OutputConfig = field(default_factory=OutputConfig)
    profiles: dict = field(default_factory=dict)  # name -> InterpreterProfile

    def to_dict(self) -> dict:
        d = {f.name: _plain(dataclasses.asdict(getattr(self, f.name))) for f in dataclasses.fields(self) if f.name != "profiles"}
        d["profiles"] = {k: _plain(dataclasses.asdict(v)) for k, v in self.profiles.items()}
        return d

    def interpreter_profiles(self) -> dict:
        merged = dict(DEFAULT_PROFILES)
        merged.update(self.profiles)
        return merged


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_SECTIONS = {
    "data": DataConfig,
    "evolution": EvolutionConfig,
    "limits": ExecLimits,
    "gateway": GatewayConfig,
    "baselines": BaselineParams,
    "output": OutputConfig,
}


def _build(cls, raw, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build_profile(name: str, raw) -> InterpreterProfile:
    if not isinstance(raw, dict):
        raise ConfigError(f"profiles.{name}: expected a mapping")
    raw = dict(raw)
    raw.setdefault("name", name)
    prof = _build(InterpreterProfile, raw, f"profiles.{name}")
    if not prof.command:
        raise ConfigError(f"profiles.{name}: command is empty")
    return prof


def from_mapping(raw: dict | None) -> RunConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - set(_SECTIONS) - {"profiles"})
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    sections = {name: _build(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    profiles = {name: _build_profile(name, p) for name, p in (raw.get("profiles") or {}).items()}
    return RunConfig(profiles=profiles, **sections)


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        parsed = yaml.safe_load(value) if value.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return key.strip().split("."), parsed


def apply_overrides(raw: dict, overrides) -> dict:
    raw = dict(raw or {})
    for text in overrides or ():
        path, value = parse_override(text)
        node = raw
        for part in path[:-1]:
            child = node.get(part)
            child = dict(child) if isinstance(child, dict) else {}
            node[part] = child
            node = child
        node[path[-1]] = value
    return raw


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw = apply_overrides(raw, [f"evolution.rng_seed={seed}", f"baselines.rng_seed={seed}"])
    return from_mapping(raw)
