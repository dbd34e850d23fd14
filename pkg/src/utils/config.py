"""Configuration utilities for GridSnoop."""

from __future__ import annotations

import functools
from pathlib import Path
from typing import Any, Dict

import yaml

_PROJECT_ROOT = Path(__file__).resolve().parents[2]
_CONFIG_DIR = _PROJECT_ROOT / "config"
DATA_DIR = _PROJECT_ROOT / "data"


class ConfigError(RuntimeError):
    """Raised when a configuration file cannot be located or parsed."""


def resolve_config_path(relative_path: str | Path) -> Path:
    """Resolve a config name against ``config/`` unless it is absolute or exists.

    Accepts either just the filename (e.g., "scenario.yaml") or a path
    mistakenly prefixed with "config/". In the latter case, the redundant
    prefix is removed to avoid resolving to "config/config/...".
    """

    rp = Path(relative_path)
    if rp.is_absolute() or rp.exists():
        return rp
    parts = list(rp.parts)
    if parts and parts[0].lower() == "config":
        parts = parts[1:]  # drop redundant 'config' prefix
    rp = Path(*parts) if parts else rp
    return _CONFIG_DIR / rp


@functools.lru_cache(maxsize=None)
def load_yaml(relative_path: str) -> Dict[str, Any]:
    """Load a YAML config file from the config directory (or an explicit path)."""

    config_path = resolve_config_path(relative_path)
    if not config_path.exists():
        raise ConfigError(
            f"Configuration file not found: {config_path} (hint: pass 'scenario.yaml', not 'config/scenario.yaml')"
        )

    try:
        with config_path.open("r", encoding="utf-8") as handle:
            loaded = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {config_path}: {exc}") from exc

    if not isinstance(loaded, dict):
        raise ConfigError(f"Configuration {config_path} must be a key-value mapping")
    return loaded


def resolve_data_path(value: str | Path) -> Path:
    """Resolve bundled data references such as ``cases/ieee14.case``."""

    candidate = Path(value)
    if candidate.is_absolute() or candidate.exists():
        return candidate
    bundled = DATA_DIR / candidate
    if bundled.exists():
        return bundled
    return candidate
