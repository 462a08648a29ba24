"""Run configuration: key=value files merged with CLI overrides.

Precedence is CLI flag > config file > built-in default; the fully resolved
configuration is echoed into the run manifest.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .training import TrainConfig, TrainSetupError


class ConfigError(ValueError):
    """Raised for unreadable or ill-typed configuration input."""


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}, line {line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


_TRAIN_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, value) -> object:
    """Coerce a raw string to the TrainConfig field's declared type."""
    if not isinstance(value, str):
        return value
    declared = _TRAIN_FIELD_TYPES.get(name, "str")
    try:
        if declared == "int":
            return int(value)
        if declared == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from exc
    return value


def resolve_train_config(
    config_path: str | Path | None = None,
    overrides: dict | None = None,
    extras: dict[str, str] | None = None,
) -> TrainConfig:
    """Build a TrainConfig from defaults, a config file, and CLI overrides.

    Keys in the file that are not TrainConfig fields (e.g. data paths) are
    returned through ``extras`` if a dict is supplied; unknown CLI overrides
    are an error.
    """
    merged: dict = {}
    if config_path is not None:
        for key, value in parse_config_file(config_path).items():
            if key in _TRAIN_FIELD_TYPES:
                merged[key] = _coerce(key, value)
            elif extras is not None:
                extras[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _TRAIN_FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, value)
    try:
        return TrainConfig(**merged)
    except (TrainSetupError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
