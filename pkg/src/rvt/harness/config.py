"""Run configuration: model, augmentation, attack and optimizer settings in one JSON file."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from rvt.augmentation import AugConfig
from rvt.errors import ConfigError
from rvt.model.config import ModelConfig, preset
from rvt.robustness.attacks import AttackConfig

OPTIMIZERS = ("adamw", "sgd")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.05
    epochs: int = 30
    batch: int = 32
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"optimizer.kind must be one of {OPTIMIZERS}, got {self.kind!r}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("optimizer.lr and optimizer.weight_decay must be non-negative")
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("optimizer.epochs must be >= 0 and optimizer.batch >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("optimizer.momentum must lie in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> OptimizerConfig:
        return cls(**_strict(cls, data, "optimizer"))


def _strict(cls, data: Any, where: str) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return dict(data)


def _model_from(value: Any) -> ModelConfig:
    if isinstance(value, str):
        return preset(value)
    if isinstance(value, dict):
        return ModelConfig.from_dict(value)
    raise ConfigError("model: expected a preset name or a JSON object")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; ``seed`` fixes every random stream.

    ``dataset`` is a path to an RVTD file, or ``"synthetic:N"`` for the
    built-in 4-class generator with ``N`` images per class (seeded by ``seed``).
    """

    model: ModelConfig
    aug: AugConfig = field(default_factory=AugConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    dataset: str = "synthetic:64"
    output: str = "runs/default"

    def __post_init__(self):
        problems = self.model.violations()
        if problems:
            raise ConfigError("; ".join(problems))
        if self.model.image_size % self.aug.patch:
            raise ConfigError(f"aug.patch={self.aug.patch} does not tile image_size={self.model.image_size}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "aug": self.aug.to_dict(),
            "attack": self.attack.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "seed": self.seed,
            "dataset": self.dataset,
            "output": self.output,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        kw = _strict(cls, data, "run")
        if "model" not in kw:
            raise ConfigError("run: missing 'model'")
        kw["model"] = _model_from(kw["model"])
        if "aug" in kw:
            kw["aug"] = AugConfig.from_dict(_strict(AugConfig, kw["aug"], "aug"))
        if "attack" in kw:
            kw["attack"] = AttackConfig.from_dict(_strict(AttackConfig, kw["attack"], "attack"))
        if "optimizer" in kw:
            kw["optimizer"] = OptimizerConfig.from_dict(kw["optimizer"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"run: {exc}") from exc

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def load_config(path) -> RunConfig:
    """Read a run config; a bare model config (or preset name) is wrapped in defaults."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(data, dict) and "stage" in data:
        return RunConfig(model=ModelConfig.from_dict(data))
    if isinstance(data, str):
        return RunConfig(model=preset(data))
    return RunConfig.from_dict(data)
