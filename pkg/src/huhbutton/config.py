"""Runtime settings with a fixed precedence chain.

Resolution order for every key: explicit override (CLI flag) beats the
``HUH_<KEY>`` environment variable, which beats the JSON config file, which
beats the built-in default. ``abbreviations`` is a JSON array in both the
file and the environment variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .bundle import DEFAULT_ABORT_THRESHOLD, DEFAULT_INTERVAL_MS
from .emissions import DEFAULT_FACTOR_KG_PER_TOKEN
from .segmenter import (
    DEFAULT_ABBREVIATIONS,
    DEFAULT_GAP_MS,
    DEFAULT_MAX_CONTEXT_CHARS,
)

__all__ = ["Settings", "BadConfig", "load_settings", "ENV_PREFIX"]

ENV_PREFIX = "HUH_"


class BadConfig(ValueError):
    """Config file unreadable or a value has the wrong type."""


@dataclass(frozen=True)
class Settings:
    gap_ms: int = DEFAULT_GAP_MS
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS
    abbreviations: tuple[str, ...] = DEFAULT_ABBREVIATIONS
    overlap_tolerance_ms: int = 0
    interval_ms: int = DEFAULT_INTERVAL_MS
    abort_threshold: float = DEFAULT_ABORT_THRESHOLD
    factor_kg_per_token: float = DEFAULT_FACTOR_KG_PER_TOKEN
    cache_max_age_s: int = 86400
    temperature: float = 0.0
    max_output_tokens: int = 512
    max_in_flight: int = 4
    retry_max_attempts: int = 4
    retry_backoff_base_ms: int = 500
    api_base_url: str = ""
    model: str = ""
    api_key: str = ""
    template_dir: str = ""


_FIELD_TYPES = {f.name: f.type for f in fields(Settings)}


def _coerce(name: str, raw: Any) -> Any:
    default = getattr(Settings(), name)
    try:
        if name == "abbreviations":
            if isinstance(raw, str):
                raw = json.loads(raw)
            if not isinstance(raw, (list, tuple)) or not all(
                isinstance(item, str) for item in raw
            ):
                raise TypeError("expected a JSON array of strings")
            return tuple(raw)
        if isinstance(default, bool):  # bool is int; keep the check first
            raise TypeError("no boolean settings exist")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError, json.JSONDecodeError) as err:
        raise BadConfig(f"bad value for {name!r}: {raw!r} ({err})") from err


def load_settings(
    config_file: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    *,
    environ: Mapping[str, str] | None = None,
) -> Settings:
    """Merge defaults, config file, environment, and explicit overrides.

    ``overrides`` entries set to None are ignored, so CLI layers can pass
    their option dict straight through.
    """
    if environ is None:
        environ = os.environ
    values: dict[str, Any] = {}

    if config_file is not None:
        try:
            doc = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise BadConfig(f"cannot read config file {config_file}: {err}") from err
        if not isinstance(doc, dict):
            raise BadConfig(f"config file {config_file} must hold a JSON object")
        for name, raw in doc.items():
            if name not in _FIELD_TYPES:
                raise BadConfig(f"unknown config key {name!r}")
            values[name] = _coerce(name, raw)

    for name in _FIELD_TYPES:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = _coerce(name, raw)

    if overrides:
        for name, raw in overrides.items():
            if raw is None:
                continue
            if name not in _FIELD_TYPES:
                raise BadConfig(f"unknown setting {name!r}")
            values[name] = _coerce(name, raw)

    return Settings(**values)
