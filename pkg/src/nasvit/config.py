"""Line-oriented ``key = value`` run configuration.

Keys are ``section.field``; sections are model, nasnet, vit, fusion, preprocess,
augment, train and data. ``#`` starts a comment. Every key has a default, so an
empty file is a valid config.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable

from .dataset import AugmentConfig
from .errors import ConfigError
from .fusion import FusionConfig, ModelConfig
from .mixprocessing import PreprocessConfig
from .nasnet import NasnetConfig
from .vit import VitConfig


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class DataConfig:
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    split_seed: int = 0
    root: str = ""
    output_dir: str = ""

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


# section name -> path of attributes from RunConfig
_SECTIONS: dict[str, tuple[str, ...]] = {
    "model": ("model",),
    "nasnet": ("model", "nasnet"),
    "vit": ("model", "vit"),
    "fusion": ("model", "fusion"),
    "preprocess": ("preprocess",),
    "augment": ("augment",),
    "train": ("train",),
    "data": ("data",),
}


def _section(run: RunConfig, name: str):
    obj = run
    for attr in _SECTIONS[name]:
        obj = getattr(obj, attr)
    return obj


def _scalar_fields(obj) -> list[dataclasses.Field]:
    return [f for f in dataclasses.fields(obj) if not dataclasses.is_dataclass(getattr(obj, f.name))]


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(text: str, default: Any) -> Any:
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if isinstance(default, tuple):
        parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
        if len(parts) != len(default):
            raise ValueError(f"expected {len(default)} comma-separated values, got {text!r}")
        return tuple(parse_value(p, d) for p, d in zip(parts, default))
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def config_pairs(run: RunConfig) -> list[tuple[str, str]]:
    """Every key with its current value, in documentation order."""
    pairs = []
    for name in _SECTIONS:
        obj = _section(run, name)
        pairs += [(f"{name}.{f.name}", format_value(getattr(obj, f.name))) for f in _scalar_fields(obj)]
    return pairs


def format_config(run: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_pairs(run))


def config_hash(run: RunConfig) -> str:
    return hashlib.sha256(format_config(run).encode()).hexdigest()


def _known_keys() -> dict[str, Any]:
    default = RunConfig()
    keys = {}
    for name in _SECTIONS:
        obj = _section(default, name)
        for f in _scalar_fields(obj):
            keys[f"{name}.{f.name}"] = getattr(obj, f.name)
    return keys


def parse_lines(lines: Iterable[tuple[int, str, str]], extra_prefixes: tuple[str, ...] = ()):
    """Build a RunConfig from ``(line_no, key, value)`` triples.

    Keys starting with any of ``extra_prefixes`` are returned separately instead of
    being rejected. Returns ``(run_config, extras)``.
    """
    known = _known_keys()
    updates: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    extras: dict[str, str] = {}
    seen: set[str] = set()
    for lineno, key, value in lines:
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key.startswith(extra_prefixes) and extra_prefixes:
            extras[key] = value
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = parse_value(value, known[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
        section, fname = key.split(".", 1)
        updates[section][fname] = parsed

    def build(cls, name, **nested):
        return cls(**{**updates[name], **nested})

    try:
        model = ModelConfig(
            **updates["model"],
            nasnet=build(NasnetConfig, "nasnet"),
            vit=build(VitConfig, "vit"),
            fusion=build(FusionConfig, "fusion"),
        )
        run = RunConfig(
            model=model,
            preprocess=build(PreprocessConfig, "preprocess"),
            augment=build(AugmentConfig, "augment"),
            train=build(TrainConfig, "train"),
            data=build(DataConfig, "data"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return run, extras


def split_lines(text: str) -> list[tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out.append((lineno, key.strip(), value.strip()))
    return out


def parse_config(text: str) -> RunConfig:
    return parse_lines(split_lines(text))[0]


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def describe_keys() -> str:
    """One ``key = default`` line per config key, for --help output."""
    return format_config(RunConfig())
