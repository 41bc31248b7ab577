"""INI-style configuration files with per-stage sections.

Parsed with :mod:`configparser`; every value is a string until the caller
coerces it.  The full schema lives in docs/config.md.  A packaged
``quickstart`` config drives the end-to-end pipeline on a synthetic
corpus.
"""
from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

from medspan.tagger.model import TrainConfig


class ConfigError(ValueError):
    """Missing or malformed configuration."""


def load_config(path: Optional[Path | str]) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return {section: dict(parser[section]) for section in parser.sections()}


def quickstart_path() -> Path:
    return Path(str(resources.files("medspan") / "configs" / "quickstart.cfg"))


def section(config: Mapping[str, Mapping[str, str]], name: str) -> dict[str, str]:
    return dict(config.get(name, {}))


def get_int(sec: Mapping[str, str], key: str, default: int) -> int:
    try:
        return int(sec.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {sec[key]!r}") from exc


def get_float(sec: Mapping[str, str], key: str, default: float) -> float:
    try:
        return float(sec.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {sec[key]!r}") from exc


def get_bool(sec: Mapping[str, str], key: str, default: bool) -> bool:
    raw = sec.get(key)
    if raw is None:
        return default
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def train_config_from(sec: Mapping[str, str], seed: Optional[int] = None) -> TrainConfig:
    """TrainConfig from a [train]-style section; CLI --seed wins."""
    kwargs: dict[str, Any] = {}
    for key, cast in (
        ("epochs", int),
        ("batch_start", float),
        ("batch_growth", float),
        ("batch_cap", float),
        ("dropout", float),
        ("learning_rate", float),
        ("silver_ratio", float),
        ("patience", int),
        ("seed", int),
        ("width", int),
        ("depth", int),
        ("table_size", int),
        ("hash_seed", int),
    ):
        if key in sec:
            try:
                kwargs[key] = cast(sec[key])
            except ValueError as exc:
                raise ConfigError(f"train.{key}: bad value {sec[key]!r}") from exc
    if seed is not None:
        kwargs["seed"] = seed
    return TrainConfig(**kwargs)
