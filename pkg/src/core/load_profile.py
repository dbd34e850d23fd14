"""Perfiles de carga sintéticos: curva diaria más fluctuación aleatoria por barra."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.core.network import NetworkCase
from src.core.powerflow import BusInjections

SHAPES = ("flat", "daily")
_LOAD_STREAM = 0


def daily_shape(t: float) -> float:
    """Smooth 24 h scaling curve in [0.6, 1.0]: evening peak and a small morning bump."""

    hours = (t / 60.0) % 24.0
    evening = np.cos(2.0 * np.pi * (hours - 19.0) / 24.0)
    morning = np.cos(4.0 * np.pi * (hours - 8.0) / 24.0)
    return float(0.8 + 0.15 * evening + 0.05 * morning)


@dataclass(frozen=True, eq=False)
class LoadProfileConfig:
    bus_ids: Tuple[int, ...]
    base_p_load: np.ndarray
    base_q_load: np.ndarray
    base_p_gen: np.ndarray
    shape: str = "daily"
    fluctuation: float = 0.1
    seed: int = 0
    cadence: int = 1

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"shape debe ser uno de {SHAPES}, recibido '{self.shape}'")
        if not 0.0 <= self.fluctuation <= 0.5:
            raise ValueError("fluctuation must lie in [0, 0.5]")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1 minute")
        for name in ("base_p_load", "base_q_load", "base_p_gen"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (len(self.bus_ids),):
                raise ValueError(f"{name} must have one entry per bus")
            object.__setattr__(self, name, values)

    @classmethod
    def from_case(
        cls,
        case: NetworkCase,
        *,
        shape: str = "daily",
        fluctuation: float = 0.1,
        seed: int = 0,
        cadence: int = 1,
    ) -> "LoadProfileConfig":
        return cls(
            bus_ids=case.bus_ids,
            base_p_load=np.array([bus.p_load for bus in case.buses]),
            base_q_load=np.array([bus.q_load for bus in case.buses]),
            base_p_gen=np.array([0.0 if bus.type == "slack" else bus.p_gen for bus in case.buses]),
            shape=shape,
            fluctuation=fluctuation,
            seed=seed,
            cadence=cadence,
        )

    def scale(self, t: float) -> float:
        return 1.0 if self.shape == "flat" else daily_shape(t)

    def sample_times(self, length: int) -> np.ndarray:
        """Sample instants (minutes) covering ``[0, length)`` at the configured cadence."""

        return np.arange(0, length, self.cadence, dtype=float)


def generate_loads(profile: LoadProfileConfig, t: float) -> BusInjections:
    """Net injections at minute ``t``; a pure function of (seed, t)."""

    if t < 0:
        raise ValueError("t must be non-negative")
    shape = profile.scale(t)
    n_bus = len(profile.bus_ids)
    rng = np.random.default_rng([int(profile.seed), int(round(t)), _LOAD_STREAM])
    f = profile.fluctuation
    p_factor = 1.0 + rng.uniform(-f, f, size=n_bus)
    q_factor = 1.0 + rng.uniform(-f, f, size=n_bus)

    p_load = profile.base_p_load * shape * p_factor
    q_load = profile.base_q_load * shape * q_factor
    p_gen = profile.base_p_gen * shape
    return BusInjections(profile.bus_ids, p_gen - p_load, -q_load)
