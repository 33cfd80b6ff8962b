"""Experiment configuration read from JSON."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .nn import PRECISIONS, TrainConfig
from .synth import CLASSES, SHAPES


class ConfigError(ValueError):
    def __init__(self, name: str, msg: str):
        super().__init__(f"{name}: {msg}")
        self.field = name


@dataclass
class ExperimentConfig:
    level: int = 4
    a: float = 8.0
    resolution: int = 512
    # training
    epochs: int = 400
    batch_size: int = 16
    lr: float = 1e-3
    lr_drop_epoch: int = 200
    lr_after_drop: float = 1e-4
    beta: float = 0.1
    k: int = 39
    slope: float = 0.01
    channels: int = 128
    optimizer: str = "adam"
    seed: int = 0
    precision: str = "float64"
    # data
    classes: list = field(default_factory=lambda: list(CLASSES))
    per_class_train: int = 5
    per_class_eval: int = 5
    deform_seed: int = 0
    mesh_level: int = 3
    # invariance analysis
    num_transforms: int = 10
    num_repeats: int = 8
    transform_seed: int = 2024
    invariance_mode: str = "reuse"
    landscape_depth: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def positive(name):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")

        for name in ("a", "epochs", "batch_size", "lr", "lr_after_drop", "beta", "channels",
                     "num_transforms", "num_repeats", "landscape_depth", "level", "mesh_level",
                     "per_class_train", "lr_drop_epoch"):
            positive(name)
        if self.lr_drop_epoch >= self.epochs:
            raise ConfigError("lr_drop_epoch", "must be smaller than epochs")
        if self.resolution < 29:
            raise ConfigError("resolution", "must be at least 29")
        if self.k < 0:
            raise ConfigError("k", "must be non-negative")
        if self.slope < 0:
            raise ConfigError("slope", "must be non-negative")
        if self.per_class_eval < 0:
            raise ConfigError("per_class_eval", "must be non-negative")
        if not 1 <= len(self.classes) <= 8:
            raise ConfigError("classes", "between 1 and 8 classes (octagon targets)")
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown:
            raise ConfigError("classes", f"unknown class {unknown[0]!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", "must be 'adam' or 'sgd'")
        if self.precision not in PRECISIONS:
            raise ConfigError("precision", "must be 'float64' or 'float32'")
        if self.invariance_mode not in ("reuse", "retrain"):
            raise ConfigError("invariance_mode", "must be 'reuse' or 'retrain'")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        kwargs = {}
        for key, value in data.items():
            default = getattr(cls(), key)
            if isinstance(default, bool) or value is None:
                ok = isinstance(value, type(default))
            elif isinstance(default, int):
                ok = isinstance(value, int) and not isinstance(value, bool)
            elif isinstance(default, float):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                value = float(value) if ok else value
            else:
                ok = isinstance(value, type(default))
            if not ok:
                raise ConfigError(key, f"expected {type(default).__name__}, got {type(value).__name__}")
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def run_config(path) -> ExperimentConfig:
    """Load a JSON config file; missing keys take their defaults."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"malformed JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)
