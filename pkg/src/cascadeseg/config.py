"""Training/inference configuration and its INI representation.

Each sub-config is one INI section. Tuples are written comma-separated.
Command-line overrides use ``section.key=value``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from cascadeseg.augmentation import AugmentConfig
from cascadeseg.cascade import CascadeConfig
from cascadeseg.losses import FocalParams


class ConfigError(ValueError):
    pass


@dataclass
class LossConfig:
    gamma: float = 2.0
    alpha: float = 0.25
    epsilon: float = 1e-7
    aux_weights: tuple[float, float, float] = (0.5, 0.5, 0.5)
    step_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        self.focal  # validates
        if len(self.aux_weights) != 3 or len(self.step_weights) != 3:
            raise ValueError("aux_weights and step_weights need three entries each")

    @property
    def focal(self) -> FocalParams:
        return FocalParams(self.gamma, self.alpha, self.epsilon)


@dataclass
class InferenceConfig:
    patch_size: tuple[int, int, int] = (96, 96, 96)
    stride: tuple[int, int, int] = (48, 48, 48)
    thresholds: tuple[float, float, float] = (0.5, 0.5, 0.5)
    # zero in every modality means outside the imaged head; predict background there
    restrict_to_support: bool = True

    def __post_init__(self) -> None:
        if not all(0.0 < t < 1.0 for t in self.thresholds):
            raise ValueError(f"thresholds must lie in (0, 1), got {self.thresholds}")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 1
    lr_initial: float = 1e-3
    lr_after_plateau: float = 5e-4
    plateau_patience_epochs: int = 5
    plateau_min_rel_improvement: float = 1e-4
    patch_size: tuple[int, int, int] = (96, 96, 96)
    foreground_prob: float = 0.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 1
    model: CascadeConfig = field(default_factory=CascadeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_initial > 0 and self.lr_after_plateau > 0):
            raise ValueError("learning rates must be positive")
        if self.plateau_patience_epochs < 1:
            raise ValueError("plateau_patience_epochs must be >= 1")
        if not 0.0 <= self.foreground_prob <= 1.0:
            raise ValueError("foreground_prob must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        kwargs = dict(data)
        for name, sub in _SUBSECTIONS.items():
            if name in kwargs and isinstance(kwargs[name], dict):
                kwargs[name] = _build(sub, kwargs[name])
        return _build(cls, kwargs)


_SUBSECTIONS = {"model": CascadeConfig, "loss": LossConfig, "augment": AugmentConfig, "inference": InferenceConfig}


def _build(cls, values: dict[str, Any]):
    typed = {}
    defaults = cls()
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        default = getattr(defaults, f.name)
        v = values[f.name]
        typed[f.name] = tuple(v) if isinstance(default, tuple) else v
    return cls(**typed)


def _parse_scalar(text: str, like: Any) -> Any:
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _parse(text: str, like: Any) -> Any:
    if isinstance(like, tuple):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) == 1 and len(like) > 1:
            parts = parts * len(like)
        if len(parts) != len(like):
            raise ConfigError(f"expected {len(like)} comma-separated values, got {text!r}")
        return tuple(_parse_scalar(p, e) for p, e in zip(parts, like))
    return _parse_scalar(text, like)


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section_items(cfg: TrainConfig) -> dict[str, Any]:
    sections: dict[str, Any] = {"train": cfg}
    sections.update({name: getattr(cfg, name) for name in _SUBSECTIONS})
    return sections


def apply_overrides(cfg: TrainConfig, overrides: Iterable[tuple[str, str, str]]) -> TrainConfig:
    """Return a new config with ``(section, key, text)`` overrides applied."""
    data = cfg.to_dict()
    for section, key, text in overrides:
        target = data if section == "train" else data.get(section)
        if target is None or section not in ("train", *_SUBSECTIONS):
            raise ConfigError(f"unknown config section [{section}]")
        if key not in target or (section == "train" and key in _SUBSECTIONS):
            raise ConfigError(f"unknown config key {section}.{key}")
        like = getattr(_section_items(TrainConfig())[section], key)
        try:
            target[key] = _parse(text, like)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
    try:
        return TrainConfig.from_dict(data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_override(item: str) -> tuple[str, str, str]:
    """``"loss.gamma=1.5"`` -> ``("loss", "gamma", "1.5")``; bare keys belong to [train]."""
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    lhs, text = item.split("=", 1)
    section, _, key = lhs.strip().rpartition(".")
    return (section or "train"), key, text


def load_config(path: Path | str) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    overrides = [(s, k, v) for s in parser.sections() for k, v in parser.items(s)]
    return apply_overrides(TrainConfig(), overrides)


def dump_config(cfg: TrainConfig, path: Path | str) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for name, obj in _section_items(cfg).items():
        parser[name] = {
            f.name: _format(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
            if not (name == "train" and f.name in _SUBSECTIONS)
        }
    with open(path, "w") as fh:
        parser.write(fh)
