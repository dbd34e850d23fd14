"""Pruebas de utilidades: configuración, logging y validación de CSV."""

from __future__ import annotations

import logging
import os

import pandas as pd
import pytest

from src.utils.config import ConfigError, load_yaml, resolve_config_path, resolve_data_path
from src.utils.csv_validator import validate_stream_frame
from src.utils.logger import set_global_level, setup_logger


def test_config_prefix_is_dropped():
    assert resolve_config_path("config/scenario.yaml") == resolve_config_path("scenario.yaml")
    assert resolve_config_path("scenario.yaml").exists()


def test_missing_and_malformed_yaml(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_yaml(str(tmp_path / "nope.yaml"))
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_yaml(str(listing))
    broken = tmp_path / "broken.yaml"
    broken.write_text("a: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Invalid YAML"):
        load_yaml(str(broken))


def test_bundled_case_path_resolves():
    assert resolve_data_path("cases/ieee14.case").is_file()


def test_logger_format_and_global_level(monkeypatch):
    monkeypatch.setenv("GRIDSNOOP_LOG_LEVEL", "INFO")
    monkeypatch.setattr("src.utils.logger._GLOBAL_LEVEL", None)
    logger = setup_logger("src.tests_logging")
    assert len(logger.handlers) == 1
    assert setup_logger("src.tests_logging").handlers == logger.handlers
    assert logger.propagate is False
    set_global_level("debug")
    assert logger.level == logging.DEBUG
    assert setup_logger("src.tests_logging_late").level == logging.DEBUG
    assert os.environ["GRIDSNOOP_LOG_LEVEL"] == "INFO"
    set_global_level("info")


def test_stream_validation_reports_errors():
    frame = pd.DataFrame(
        {"t": [0.0, -1.0], "meter_id": ["v_mag@1", "v_mag@2"], "kind": ["v_mag"] * 2, "value": [1.0, 1.0], "sigma": [0.01, 0.0]}
    )
    report = validate_stream_frame(frame)
    assert len(report["errors"]) == 2
    assert not validate_stream_frame(frame.drop(columns=["sigma"]).assign(sigma=0.01, t=0.0))["errors"]
    assert "Falta columna requerida: sigma" in validate_stream_frame(frame.drop(columns=["sigma"]))["errors"]
