"""Declarative run configuration (YAML) and builders for library objects.

Every key has a default. Unknown keys are rejected so that a typo such as
``epochz`` fails loudly instead of silently training with the default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from cumlr.data import SyntheticSpec, generate_synthetic, load_mnist, resolve_data_dir
from cumlr.errors import ConfigError
from cumlr.schedule import ScheduleShape
from cumlr.tuner import OptimizerSpec, TrainRun, make_grid

DEFAULT_GRIDS = {"sgd": (1e-3, 1.0), "adam": (1e-5, 1e-1)}


@dataclass
class DatasetConfig:
    kind: str = "synthetic"          # synthetic | mnist
    path: str | None = None          # MNIST directory; falls back to $CUMLR_DATA_DIR
    train_size: int = 2048
    num_classes: int = 4
    per_class_count: int = 640
    feature_dim: int = 16
    cluster_separation: float = 1.0
    noise_scale: float = 0.5
    seed: int = 0


@dataclass
class ModelConfig:
    layer_sizes: list[int] = field(default_factory=lambda: [16, 32, 4])


@dataclass
class OptimizerConfig:
    kind: str = "sgd"                # sgd | adam
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class ScheduleConfig:
    kind: str = "constant"           # constant | halving_decay | cyclical_triple | custom
    eta0: float = 0.1
    multipliers: list[float] | None = None


@dataclass
class TrainingConfig:
    epochs: int = 4
    batch_size: int = 64
    base_seed: int = 0
    repeats: int = 3


@dataclass
class SweepConfig:
    lo: float | None = None          # None: optimizer-specific default
    hi: float | None = None
    points_per_decade: int = 4
    refine: bool = True
    zoom_points: int = 7


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_SECTION_TYPES = {
    "dataset": DatasetConfig, "model": ModelConfig, "optimizer": OptimizerConfig,
    "schedule": ScheduleConfig, "training": TrainingConfig, "sweep": SweepConfig,
}


# fields whose default is None, with the type a given value must have
_OPTIONAL = {("dataset", "path"): "", ("sweep", "lo"): 0.0, ("sweep", "hi"): 0.0,
             ("schedule", "multipliers"): [0.0]}


def _coerce(section: str, key: str, value: Any, default: Any):
    if value is None:
        return value
    if default is None:
        default = _OPTIONAL.get((section, key))
        if default is None:
            return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot, like 1e-3, as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key} must be a list, got {value!r}")
        if default:
            return [_coerce(section, f"{key}[{i}]", v, default[0]) for i, v in enumerate(value)]
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{section}.{key} must be a string, got {value!r}")
    return value


def from_dict(d: dict | None) -> RunConfig:
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(d) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        values = d.get(name) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(values) - known
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
        kwargs = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in values.items()}
        sections[name] = cls(**kwargs)
    return RunConfig(**sections)


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars/lists."""
    d = {k: dict(v or {}) for k, v in (d or {}).items()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        d.setdefault(section, {})[key] = yaml.safe_load(raw)
    return d


def resolve(cfg: RunConfig) -> RunConfig:
    """Fill optimizer-dependent defaults and validate everything by building it once."""
    cfg = dataclasses.replace(cfg, sweep=dataclasses.replace(cfg.sweep))
    lo, hi = DEFAULT_GRIDS.get(cfg.optimizer.kind, (None, None))
    if cfg.sweep.lo is None:
        cfg.sweep.lo = lo
    if cfg.sweep.hi is None:
        cfg.sweep.hi = hi
    if cfg.dataset.kind not in ("synthetic", "mnist"):
        raise ConfigError(f"dataset.kind must be synthetic or mnist, got {cfg.dataset.kind!r}")
    if cfg.dataset.kind == "mnist":
        cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(
            cfg.dataset, path=str(resolve_data_dir(cfg.dataset.path))))
    if cfg.training.repeats < 1:
        raise ConfigError("training.repeats must be at least 1")
    if cfg.sweep.zoom_points < 2:
        raise ConfigError("sweep.zoom_points must be at least 2")
    build_template(cfg)
    build_grid(cfg)
    return cfg


def build_shape(cfg: RunConfig) -> ScheduleShape:
    m = cfg.schedule.multipliers
    return ScheduleShape(cfg.schedule.kind, tuple(m) if m is not None else None)


def build_template(cfg: RunConfig) -> TrainRun:
    o = cfg.optimizer
    return TrainRun(
        train_size=cfg.dataset.train_size,
        epochs=cfg.training.epochs,
        layer_sizes=tuple(cfg.model.layer_sizes),
        eta0=cfg.schedule.eta0,
        shape=build_shape(cfg),
        optimizer=OptimizerSpec(o.kind, o.beta1, o.beta2, o.epsilon),
        batch_size=cfg.training.batch_size,
        seed=cfg.training.base_seed,
        dataset_id=cfg.dataset.kind,
    )


def build_grid(cfg: RunConfig) -> list[float]:
    return make_grid(cfg.sweep.lo, cfg.sweep.hi, cfg.sweep.points_per_decade)


def synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    d = cfg.dataset
    return SyntheticSpec(d.num_classes, d.per_class_count, d.feature_dim,
                         d.cluster_separation, d.noise_scale, d.seed)


def build_dataset(cfg: RunConfig):
    """Raises ``FileNotFoundError`` with fetch instructions when MNIST is absent."""
    if cfg.dataset.kind == "mnist":
        return load_mnist(cfg.dataset.path)
    return generate_synthetic(synthetic_spec(cfg))


def dump_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
