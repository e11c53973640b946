"""Run configuration: INI files with [data], [model] and [train] sections plus dotted overrides."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .harness import ExperimentConfig
from .models import ModelConfig


class ConfigError(ValueError):
    """Unknown key, bad value or unreadable config file."""


@dataclass(frozen=True)
class DataConfig:
    dataset: str = ""
    root: str = ""
    missing_policy: str = "drop-edges"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 300
    train_fracs: tuple[float, ...] = (0.1, 0.2, 0.3)
    train_frac: float = 0.1
    realizations: int = 20
    base_seed: int = 0
    seed: int = 0
    weight_decay: float = 0.0
    early_stop: bool = False
    patience: int = 30
    min_delta: float = 1e-5


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def experiment(self) -> ExperimentConfig:
        t = self.train
        try:
            return ExperimentConfig(self.data.dataset, self.model, t.lr, t.epochs, t.train_fracs, t.realizations,
                                    t.base_seed, t.weight_decay, t.early_stop, t.patience, t.min_delta,
                                    self.data.missing_policy)
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None

    def to_ini(self) -> str:
        lines = []
        for section, cls in SECTIONS.items():
            part = getattr(self, section)
            lines.append(f"[{section}]")
            lines += [f"{f.name} = {_format(getattr(part, f.name))}" for f in dataclasses.fields(cls)]
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini())
        return path


SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig}


def valid_keys() -> list[str]:
    return [f"{s}.{f.name}" for s, cls in SECTIONS.items() for f in dataclasses.fields(cls)]


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _coerce(cls, name: str, text: str):
    """Convert ``text`` to the type of the field's default value."""
    f = next(f for f in dataclasses.fields(cls) if f.name == name)
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    text = text.strip()
    if text.lower() == "none" and (default is None or name in ("logit_slope",)):
        return None
    if isinstance(default, bool) or (default is None and name == "share_features_across_layers"):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or name == "logit_slope":
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(v) for v in text.split(",") if v.strip())
    return text


def _split_key(key: str) -> tuple[str, str]:
    section, _, name = key.partition(".")
    if not name or section not in SECTIONS or name not in {f.name for f in dataclasses.fields(SECTIONS[section])}:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(valid_keys())}")
    return section, name


def resolve(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``section.key=value`` overrides."""
    values: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {' '.join(str(exc).split())}") from None
        for section in parser.sections():
            for name, value in parser[section].items():
                values[_split_key(f"{section}.{name}")[0]][name] = value
    for item in overrides:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        section, name = _split_key(key.strip())
        values[section][name] = value
    parts = {}
    for section, cls in SECTIONS.items():
        kwargs = {}
        for name, text in values[section].items():
            try:
                kwargs[name] = _coerce(cls, name, text)
            except ValueError as exc:
                raise ConfigError(f"{section}.{name}: {exc}") from None
        try:
            parts[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return RunConfig(**parts)
