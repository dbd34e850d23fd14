"""Ground-truth side of the co-simulation: grid evolution and the operator's BDD."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

from src.core.estimation import (
    EstimateRecord,
    EstimatorConfig,
    alarm_threshold,
    degrees_of_freedom,
    empirical_alarm_threshold,
    estimate_state,
    monitor_snapshot,
)
from src.core.load_profile import generate_loads
from src.core.measurements import MeasurementSet, SystemState, measure
from src.core.network import MeterLayout, NetworkCase, default_layout
from src.core.powerflow import solve_power_flow
from src.scenario.config import ScenarioConfig
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: float
    state: SystemState
    measurements: MeasurementSet


def simulate_stream(
    case: NetworkCase,
    cfg: ScenarioConfig,
    seed: int,
    *,
    layout: Optional[MeterLayout] = None,
    length: Optional[int] = None,
) -> Iterator[Snapshot]:
    """Load profile -> power flow -> noisy meters, one snapshot per cadence step.

    Each snapshot depends only on ``(seed, t)`` so any prefix of the stream is
    reproducible on its own.
    """

    layout = layout or default_layout(case)
    profile = cfg.load_profile(case, seed)
    for t in profile.sample_times(cfg.length if length is None else length):
        injections = generate_loads(profile, t)
        state = solve_power_flow(case, injections)
        z = measure(case, state, layout, cfg.noise_fraction, seed, t)
        yield Snapshot(t=float(t), state=state, measurements=z)


def snapshots_needed(cfg: ScenarioConfig, count: int) -> int:
    """Scenario length in minutes that yields at least ``count`` snapshots."""

    return max(cfg.length, count * cfg.cadence)


class OperatorMonitor:
    """System operator: WLS on the true case plus the 2-norm BDD."""

    def __init__(self, case: NetworkCase, layout: MeterLayout, cfg: EstimatorConfig, tau: Optional[float] = None) -> None:
        self.case = case
        self.layout = layout
        self.cfg = cfg
        self.dof = degrees_of_freedom(len(layout), case.n_bus)
        if tau is None and cfg.threshold_mode == "chi2":
            tau = alarm_threshold(cfg, self.dof)
        self.tau = tau

    def calibrate(self, clean: Sequence[MeasurementSet]) -> float:
        """Empirical tau from the residual quantile over clean snapshots."""

        if not clean:
            raise ValueError("Empirical threshold needs at least one calibration snapshot")
        residuals = [estimate_state(z, self.case, self.cfg).weighted_residual for z in clean]
        self.tau = empirical_alarm_threshold(residuals, self.cfg.confidence)
        LOGGER.info("Empirical operator threshold %.4f from %d clean snapshots", self.tau, len(clean))
        return self.tau

    def observe(self, z: MeasurementSet) -> EstimateRecord:
        if self.tau is None:
            raise RuntimeError("Operator threshold not calibrated")
        return monitor_snapshot(z, self.case, self.cfg, self.tau)


def operator_for(case: NetworkCase, cfg: ScenarioConfig, snapshots: Sequence[Snapshot]) -> OperatorMonitor:
    """Build the operator and calibrate it on the leading clean snapshots when empirical."""

    layout = snapshots[0].measurements.layout if snapshots else default_layout(case)
    monitor = OperatorMonitor(case, layout, cfg.estimator_config())
    if monitor.tau is None:
        window = max(1, cfg.calibration_minutes // cfg.cadence)
        monitor.calibrate([snap.measurements for snap in snapshots[:window]])
    return monitor


def measurements_of(snapshots: Sequence[Snapshot]) -> List[MeasurementSet]:
    return [snap.measurements for snap in snapshots]
