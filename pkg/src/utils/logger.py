"""Logging utilities for the application."""

from __future__ import annotations

import logging
import os
from typing import Optional

_ENV_VARIABLE = "GRIDSNOOP_LOG_LEVEL"
# Set by set_global_level; wins over the environment for loggers created later.
_GLOBAL_LEVEL: Optional[str] = None


def _default_level() -> str:
    return _GLOBAL_LEVEL or os.getenv(_ENV_VARIABLE, "INFO").upper()


def setup_logger(name: Optional[str] = None, level: Optional[str] = None) -> logging.Logger:
    """Configure and return a logger instance with the project defaults."""

    logger = logging.getLogger(name or "gridsnoop")
    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(
            fmt="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    logger.setLevel((level or _default_level()).upper())
    logger.propagate = False
    return logger


def set_global_level(level: str) -> None:
    """Apply a level to every project logger, current (``src.*``) and future."""

    global _GLOBAL_LEVEL
    _GLOBAL_LEVEL = level.upper()
    for logger_name in list(logging.root.manager.loggerDict):
        if logger_name.startswith("src") or logger_name == "gridsnoop":
            logging.getLogger(logger_name).setLevel(level.upper())
