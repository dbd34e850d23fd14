"""Configuración de escenarios: YAML plano con claves sobreescribibles desde la CLI."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from src.attack.engine import AttackGoal, GateConfig
from src.core.estimation import EstimatorConfig
from src.core.load_profile import LoadProfileConfig
from src.core.network import NetworkCase
from src.core.topology import CoarseConfig, FineConfig, LearnerConfig
from src.utils.config import load_yaml
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

DEFAULT_CONFIG = "scenario.yaml"
_INT_TUPLES = ("targets", "seeds", "sample_counts")


class ScenarioValidationError(ValueError):
    """Se lanza cuando un valor de configuración es inválido o desconocido."""


@dataclass(frozen=True)
class ScenarioConfig:
    case: str = "cases/ieee14.case"
    noise_fraction: float = 0.01
    cadence: int = 1
    length: int = 720
    fluctuation: float = 0.1
    shape: str = "daily"
    # attack goal
    targets: Tuple[int, ...] = (1,)
    bias_mode: str = "multiplicative"
    magnitude: float = 0.15
    quantity: str = "angle"
    region_mode: str = "neighbourhood"
    # attacker gate
    gating: bool = True
    margin: float = 0.8
    min_samples: int = 200
    relearn_every: int = 20
    calibration_window: int = 20
    localize: bool = True
    tau_hat: Optional[float] = None
    noise_prior: Optional[float] = None
    # operator
    confidence: float = 0.99
    threshold_mode: str = "chi2"
    calibration_minutes: int = 60
    # learner
    threshold_fraction: float = 0.05
    post_prune_fraction: float = 0.02
    ridge: Optional[float] = None
    center: bool = False
    fine_max_iterations: int = 60
    # harness
    seeds: Tuple[int, ...] = (1,)
    sample_counts: Tuple[int, ...] = (50, 100, 200, 400, 720)
    out: str = "results"
    workers: int = 1

    def __post_init__(self) -> None:
        for name in _INT_TUPLES:
            object.__setattr__(self, name, _int_tuple(name, getattr(self, name)))
        if self.length < 1:
            raise ScenarioValidationError(f"length must be >= 1 minute (got {self.length})")
        if not self.seeds:
            raise ScenarioValidationError("seeds must be a non-empty list")
        if any(seed < 0 for seed in self.seeds):
            raise ScenarioValidationError("seeds must be non-negative integers")
        if self.noise_fraction < 0:
            raise ScenarioValidationError("noise_fraction must be >= 0")
        if self.workers < 1:
            raise ScenarioValidationError("workers must be >= 1")
        if any(count < 1 for count in self.sample_counts):
            raise ScenarioValidationError("sample_counts must be positive")
        # Delegate the remaining range checks to the typed configs.
        try:
            self.estimator_config()
            self.goal()
            self.gate_config()
            self.learner_config()
            if not 0.0 <= self.fluctuation <= 0.5 or self.cadence < 1 or self.shape not in ("flat", "daily"):
                raise ValueError("fluctuation must lie in [0, 0.5], cadence >= 1, shape flat|daily")
        except ValueError as exc:
            if isinstance(exc, ScenarioValidationError):
                raise
            raise ScenarioValidationError(str(exc)) from exc

    # -- Typed views ---------------------------------------------------------
    def load_profile(self, case: NetworkCase, seed: int) -> LoadProfileConfig:
        return LoadProfileConfig.from_case(
            case, shape=self.shape, fluctuation=self.fluctuation, seed=seed, cadence=self.cadence
        )

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(confidence=self.confidence, threshold_mode=self.threshold_mode)

    def goal(self) -> AttackGoal:
        return AttackGoal(
            targets=self.targets,
            bias_mode=self.bias_mode,
            magnitude=self.magnitude,
            quantity=self.quantity,
            region_mode=self.region_mode,
        )

    def gate_config(self) -> GateConfig:
        return GateConfig(
            margin=self.margin,
            min_samples=self.min_samples,
            relearn_every=self.relearn_every,
            calibration_window=self.calibration_window,
            confidence=self.confidence,
            tau_hat=self.tau_hat,
            noise_prior=self.noise_prior,
            enabled=self.gating,
            localize=self.localize,
        )

    def learner_config(self, min_samples: Optional[int] = None) -> LearnerConfig:
        return LearnerConfig(
            min_samples=self.min_samples if min_samples is None else min_samples,
            coarse=CoarseConfig(ridge=self.ridge, center=self.center, threshold_fraction=self.threshold_fraction),
            fine=FineConfig(max_iterations=self.fine_max_iterations),
            post_prune_fraction=self.post_prune_fraction,
        )

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ScenarioConfig":
        return replace(self, **_coerce_all(overrides))


def _int_tuple(name: str, value: Any) -> Tuple[int, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        value = [part for part in value.replace(" ", "").split(",") if part]
    if isinstance(value, (int, float)):
        value = [value]
    try:
        return tuple(int(item) for item in value)
    except (TypeError, ValueError) as exc:
        raise ScenarioValidationError(f"{name} must be a list of integers (got {value!r})") from exc


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Parse CLI strings with YAML scalars (``0.02``, ``true``, ``[1, 2]``, ``null``)."""

    if name not in _FIELD_TYPES:
        raise ScenarioValidationError(f"Unknown configuration key '{name}'")
    if isinstance(value, str) and name not in ("case", "out", "shape", "bias_mode", "quantity", "region_mode", "threshold_mode"):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ScenarioValidationError(f"Cannot parse value for {name}: {value!r}") from exc
    if name in _INT_TUPLES:
        return _int_tuple(name, value)
    field_type = str(_FIELD_TYPES[name])
    try:
        if value is None:
            if "Optional" not in field_type:
                raise ScenarioValidationError(f"{name} cannot be null")
            return None
        if field_type.startswith("bool"):
            if not isinstance(value, bool):
                raise ScenarioValidationError(f"{name} must be true or false")
            return value
        if "float" in field_type:
            return float(value)
        if field_type.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ScenarioValidationError(f"{name} must be an integer")
            return int(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioValidationError):
            raise
        raise ScenarioValidationError(f"Invalid value for {name}: {value!r}") from exc


def _coerce_all(values: Mapping[str, Any]) -> Dict[str, Any]:
    return {key.replace("-", "_"): _coerce(key.replace("-", "_"), value) for key, value in values.items()}


def load_scenario(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """Load a flat YAML scenario file and apply CLI overrides on top."""

    raw = dict(load_yaml(str(path or DEFAULT_CONFIG)))
    values = _coerce_all(raw)
    values.update(_coerce_all(overrides or {}))
    config = ScenarioConfig(**values)
    LOGGER.debug("Scenario configuration: %s", config)
    return config
