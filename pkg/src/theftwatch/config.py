"""Experiment configuration (JSON) with desk-scale defaults."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import DataError, UsageError
from .lstm import TrainConfig
from .theft import SCENARIO_CODES
from .watchdog import WatchdogConfig


class ConfigError(DataError):
    pass


@dataclass
class DataConfig:
    metadata: str | None = None
    n_groups: int = 20
    n_children: int = 20
    eval_days: int = 90
    eval_fraction: float = 0.2
    capacity: int = 200
    tl_assumed: float = 0.03
    tl_actual: float = 0.03

    @property
    def synthetic_hours(self) -> int:
        return round(self.eval_days * 24 / self.eval_fraction)


@dataclass
class TrainingConfig(TrainConfig):
    epochs: int = 30
    learning_rate: float = 5e-3
    batch_size: int = 64
    hidden_size: int = 64
    max_windows: int = 2000
    thief_rate: float = 0.5
    severity_low: float = 0.10
    severity_high: float = 0.95

    def optimizer_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    weights: str = "model.lstw"
    data: DataConfig = field(default_factory=DataConfig)
    watchdog: WatchdogConfig = field(default_factory=WatchdogConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    scenarios: list[str] = field(default_factory=lambda: list(SCENARIO_CODES))
    workers: int | None = None
    power_sampler: str | None = None

    def __post_init__(self):
        for code in self.scenarios:
            if code not in SCENARIO_CODES:
                raise ConfigError(f"unknown scenario {code!r}; valid codes: {', '.join(SCENARIO_CODES)}")

    @property
    def weights_path(self) -> Path:
        p = Path(self.weights)
        return p if p.is_absolute() else Path(self.out) / p

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"data": DataConfig, "watchdog": WatchdogConfig, "train": TrainingConfig}


def _build(cls, raw: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, UsageError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    for key, cls in _SECTIONS.items():
        if key in raw:
            raw[key] = _build(cls, raw[key] or {}, key)
    return _build(ExperimentConfig, raw, "config")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = config_from_dict(raw)
    # metadata paths in a config file are relative to that file
    if cfg.data.metadata and not Path(cfg.data.metadata).is_absolute():
        cfg.data.metadata = str(path.parent / cfg.data.metadata)
    return cfg
