"""Experiment configuration: documented defaults, key-value file, flag overrides.

Config files are flat ``key = value`` text (``#`` comments). Recognised keys
and their defaults are listed in `DEFAULTS`; command-line flags win over the
file, which wins over the defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .dataset import DatasetError, parse_mix, read_key_values
from .fed import RoundConfig
from .model import VARIANT_LAYERS, TrainingConfig
from .ube import SecurityThresholds


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    users: int = 10
    k: int = 10
    rounds: int = 50
    epochs: int = 90
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    train_fraction: float = 0.8
    thr_attack: float = 0.5
    thr_freq: float = 0.3
    variant: str = "afed"
    seed: int = 42
    data: str | None = None
    n: int = 10000
    gen_seed: int | None = None
    mix: str = "0.3,0.5,0.2"
    generator: str | None = None
    results: str = "results.csv"
    checkpoint: str = "model.ckpt"
    figure: str | None = None
    parallel: int = 0

    def validate(self) -> "ExperimentConfig":
        try:
            self.round_config()
            self.thresholds()
            parse_mix(self.mix)
        except (ValueError, DatasetError) as exc:
            raise ConfigError(str(exc)) from None
        if self.variant not in VARIANT_LAYERS:
            raise ConfigError(f"variant must be one of {sorted(VARIANT_LAYERS)}, got {self.variant!r}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.parallel < 0:
            raise ConfigError("parallel must be non-negative")
        return self

    def training(self) -> TrainingConfig:
        return TrainingConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.beta1,
            adam_beta2=self.beta2,
            adam_epsilon=self.epsilon,
        )

    def round_config(self) -> RoundConfig:
        return RoundConfig.from_master_seed(
            self.seed,
            total_users=self.users,
            participants_per_round=self.k,
            rounds=self.rounds,
            local_epochs=self.epochs,
            training=self.training(),
            train_fraction=self.train_fraction,
            variant=self.variant,
        )

    def thresholds(self) -> SecurityThresholds:
        return SecurityThresholds(self.thr_attack, self.thr_freq)

    @property
    def generator_seed(self) -> int:
        return self.seed if self.gen_seed is None else self.gen_seed


DEFAULTS = {f.name: f.default for f in fields(ExperimentConfig)}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    kind = _TYPES[key]
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.split()[0]}, got {value!r}") from None
    return str(value).strip()


def resolve(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the key-value file at `path`, then non-None `overrides`."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            file_values = read_key_values(path)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except DatasetError as exc:
            raise ConfigError(str(exc)) from None
        for key, value in file_values.items():
            key = key.strip().replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"{path}: unknown key {key!r}")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in DEFAULTS:
                raise ConfigError(f"unknown setting {key!r}")
            values[key] = _coerce(key, value)
    if "variant" in values:
        values["variant"] = values["variant"].lower()
    return ExperimentConfig(**values).validate()


def dump(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg) if getattr(cfg, f.name) is not None)
