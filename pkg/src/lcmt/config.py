"""
Run configuration
=================

A command's settings are resolved from three layers, later ones winning:

1. the command's built-in defaults,
2. an optional ``--config`` file of ``key = value`` lines (``#`` comments),
   read with python-dotenv,
3. flags given on the command line.

Keys may be spelled with ``-`` or ``_`` and are matched case-insensitively.
Values from the file are coerced to the type of the default.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from dotenv import dotenv_values

from .errors import CheckpointError, ConfigError, ConstraintConflict, DataError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONSTRAINT = 4

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def exit_code_for(exc: BaseException) -> int:
    """Process exit code for an exception escaping a command."""
    if isinstance(exc, ConstraintConflict):
        return EXIT_CONSTRAINT
    if isinstance(exc, (DataError, CheckpointError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    return EXIT_FAILURE


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def coerce(key: str, raw: Any, default: Any) -> Any:
    """Convert ``raw`` (usually a string) to the type of ``default``."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (list, tuple)):
            items = [item.strip() for item in text.split(",") if item.strip()]
            if default and isinstance(default[0], float):
                items = [float(item) for item in items]
            elif default and isinstance(default[0], int):
                items = [int(item) for item in items]
            return type(default)(items)
    except ValueError:
        raise ConfigError(f"invalid value for {key!r}: {raw!r} (expected {type(default).__name__})") from None
    if default is None and text.lower() in ("", "none"):
        return None
    return text


def read_config_file(path: str | Path) -> dict[str, str | None]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {normalize_key(key): value for key, value in values.items()}


@dataclass
class RunConfig:
    """Fully resolved settings of one command invocation."""

    command: str
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[normalize_key(key)]

    def __getattr__(self, key: str) -> Any:
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(normalize_key(key), default)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, **self.values}, sort_keys=True, default=str)


def resolve_config(
    command: str,
    defaults: Mapping[str, Any],
    file_values: Mapping[str, str | None] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Merge defaults, config-file values and explicit flags (highest priority)."""
    defaults = {normalize_key(k): v for k, v in defaults.items()}
    values = dict(defaults)
    for key, raw in (file_values or {}).items():
        key = normalize_key(key)
        if key not in defaults:
            raise ConfigError(f"unknown setting {key!r} for {command}; known: {sorted(defaults)}")
        if raw is None:
            continue
        values[key] = coerce(key, raw, defaults[key])
    for key, value in (overrides or {}).items():
        key = normalize_key(key)
        if key not in defaults:
            raise ConfigError(f"unknown setting {key!r} for {command}")
        values[key] = coerce(key, value, defaults[key])
    return RunConfig(command, values)
