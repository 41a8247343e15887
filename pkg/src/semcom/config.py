"""Declarative experiment configuration.

One nested YAML file fully determines a run: dataset, codec, losses,
channel, recipe, backbone, evaluation, seeds, output directory. Everything
is validated before any compute (unknown keys rejected, values checked by
the owning dataclasses), and the resolved config with all defaults
materialized is written next to the outputs so any run can be reproduced
from its artifacts alone.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from fractions import Fraction

import yaml

from .codec import CodecConfig
from .exceptions import ConfigError
from .losses import LossConfig
from .training import TrainRecipe

CONFIG_VERSION = 1


@dataclass
class DatasetConfig:
    name: str = "cifar10"
    root: str | None = None  # None -> env DATA_ROOT -> ./data
    seed: int = 0
    train_subset: int | None = None  # cap the training set (smoke runs)

    def __post_init__(self):
        if self.name not in ("cifar10", "stl10", "kodak"):
            raise ConfigError(f"unknown dataset {self.name!r}")
        if self.train_subset is not None and self.train_subset <= 0:
            raise ConfigError("train_subset must be positive when set")


@dataclass
class ChannelConfig:
    snr_db: float = 20.0
    power: float = 1.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.power <= 0:
            raise ConfigError(f"power must be positive, got {self.power}")


@dataclass
class BackboneConfig:
    checkpoint: str | None = None
    accuracy_floor: float = 0.92


@dataclass
class EvalConfig:
    noise_seeds: int = 10
    base_noise_seed: int = 0
    batch_size: int = 256
    max_images: int | None = None

    def __post_init__(self):
        if self.noise_seeds < 1:
            raise ConfigError("noise_seeds must be >= 1")


@dataclass
class ExperimentConfig:
    config_version: int = CONFIG_VERSION
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    recipe: TrainRecipe = field(default_factory=TrainRecipe)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(
                f"config_version {self.config_version} unsupported (expected {CONFIG_VERSION})"
            )


@dataclass
class SweepGrid:
    """The methods x SNRs x ratios grid plus where trained cells live."""

    methods: list = field(default_factory=list)
    snr_dbs: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    checkpoint_dir: str = "runs"

    def __post_init__(self):
        if not (self.methods and self.snr_dbs and self.ratios):
            raise ConfigError("sweep grid needs non-empty methods, snr_dbs, and ratios")
        self.ratios = [Fraction(r) if isinstance(r, str) else Fraction(str(r)) for r in self.ratios]
        self.snr_dbs = [float(s) for s in self.snr_dbs]


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _build_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}; known keys: {sorted(known)}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    """Validate a nested mapping into an ExperimentConfig (strict keys)."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    section_types = {
        "dataset": DatasetConfig,
        "codec": CodecConfig,
        "loss": LossConfig,
        "channel": ChannelConfig,
        "recipe": TrainRecipe,
        "backbone": BackboneConfig,
        "eval": EvalConfig,
    }
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}; known: {sorted(_SECTIONS)}")
    kwargs = {}
    for key, value in data.items():
        if key in section_types:
            kwargs[key] = _build_dataclass(section_types[key], value or {}, key)
        else:
            kwargs[key] = value
    return _build_dataclass(ExperimentConfig, {**kwargs}, "config")


def _read_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML in {path}: {exc}") from exc
    return data or {}


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    return from_dict(_read_yaml(path))


def load_sweep_config(path) -> tuple[ExperimentConfig, SweepGrid]:
    """A sweep config is an experiment config plus a top-level `sweep` section."""
    data = _read_yaml(path)
    if "sweep" not in data:
        raise ConfigError(f"{path}: sweep config needs a top-level 'sweep' section")
    grid = _build_dataclass(SweepGrid, data.pop("sweep") or {}, "sweep")
    return from_dict(data), grid


def _coerce_like(current, raw: str):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as a boolean")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, Fraction):
        return raw  # CodecConfig re-parses ratios itself
    if current is None:
        return yaml.safe_load(raw)
    return raw


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `section.key=value` CLI overrides on top of a config."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {item!r}: no section {part!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"override {item!r}: unknown key {leaf!r}")
        node[leaf] = _coerce_like(node[leaf], raw)
    return from_dict(data)


def to_dict(cfg: ExperimentConfig) -> dict:
    """Plain nested dict with all defaults materialized (Fractions as strings)."""
    def convert(value):
        if isinstance(value, Fraction):
            return str(value)
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def write_resolved(cfg: ExperimentConfig, out_dir) -> str:
    """Persist the fully resolved config next to the run's outputs."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(os.fspath(out_dir), "config.resolved.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
    return path
