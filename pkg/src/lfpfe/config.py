"""Experiment configuration in a sectioned ``key = value`` text format."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .training import TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "experiment": ("task", "seed", "deterministic", "out"),
    "data": ("data", "data_seed", "scenes", "m", "n", "h", "w", "max_disparity", "test_scenes"),
    "network": ("stages", "units", "channels", "s", "sigma", "normalize_cms", "ca_layout"),
    "train": ("epochs", "pre_epochs", "finetune_epochs", "batch", "patch", "steps_per_epoch",
              "max_lr", "gate_lr_scale", "warmup", "tau_start", "tau_end", "tau_fraction"),
}


@dataclass
class ExperimentConfig:
    task: str = "cr"
    seed: int = 0
    deterministic: bool = True
    out: str = "runs/exp"

    # empty means "generate a synthetic set from the fields below"
    data: str = ""
    data_seed: int = 0
    scenes: int = 50
    m: int = 3
    n: int = 3
    h: int = 64
    w: int = 64
    max_disparity: int = 2
    test_scenes: int = 10

    stages: int = 2
    units: int = 4
    channels: int = 16
    s: int = 2
    sigma: float = 20.0
    normalize_cms: bool = False
    ca_layout: str = "per_view"

    epochs: int = 8
    pre_epochs: int = 8
    finetune_epochs: int = 0
    batch: int = 5
    patch: int = 16
    steps_per_epoch: int = 0
    max_lr: float = 1e-3
    gate_lr_scale: float = 10.0
    warmup: float = 0.3
    tau_start: float = 1.0
    tau_end: float = 0.05
    tau_fraction: float = 0.4

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if self.task not in ("cr", "dn"):
            raise ConfigError(f"task must be 'cr' or 'dn', got {self.task!r}")
        for key in ("stages", "units", "channels", "s", "m", "n", "h", "w", "batch", "patch"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.max_disparity < 0:
            raise ConfigError("max_disparity must be >= 0")
        if min(self.epochs, self.pre_epochs, self.finetune_epochs, self.steps_per_epoch) < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.max_lr <= 0 or self.gate_lr_scale <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 < self.warmup < 1:
            raise ConfigError("warmup must lie in (0, 1)")
        if self.ca_layout not in ("per_view", "joint"):
            raise ConfigError(f"unknown ca_layout {self.ca_layout!r}")
        if check_paths and self.data and not Path(self.data).exists():
            raise ConfigError(f"data path {self.data} does not exist")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, pre_epochs=self.pre_epochs, finetune_epochs=self.finetune_epochs,
            batch=self.batch, patch=self.patch, steps_per_epoch=self.steps_per_epoch or None,
            max_lr=self.max_lr, gate_lr_scale=self.gate_lr_scale, warmup=self.warmup,
            tau_start=self.tau_start, tau_end=self.tau_end, tau_fraction=self.tau_fraction, seed=self.seed,
        )

    def with_env(self, environ=None) -> "ExperimentConfig":
        """Apply the ``PFE_SEED`` override."""
        environ = os.environ if environ is None else environ
        raw = environ.get("PFE_SEED")
        if raw is None or raw == "":
            return self
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(f"PFE_SEED must be an integer, got {raw!r}") from None
        return dataclasses.replace(self, seed=seed)

    def update(self, **overrides) -> "ExperimentConfig":
        known = {f.name for f in fields(self)}
        bad = sorted(set(overrides) - known)
        if bad:
            raise ConfigError(f"unknown config keys: {bad}")
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        for section, keys in SECTIONS.items():
            parser[section] = {k: _format(getattr(self, k)) for k in keys}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse(raw, types[key], key)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(raw: str, kind: str, key: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw
