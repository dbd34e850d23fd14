"""Construcción de vectores FDI a partir del modelo aprendido y compuerta de pseudo-residuo.

Everything here works only with what the attacker observes (snapshots and
meter labels) and what it learned (:class:`LearnedModel`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, FrozenSet, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from src.core.estimation import EstimatorConfig, ObservabilityError, StateEstimate, degrees_of_freedom, estimate_state
from src.core.measurements import SIGMA_FLOOR, MeasurementSet, SystemState
from src.core.network import IncidenceMatrix, neighbourhood, subgraph_meters
from src.core.topology import LearnedModel
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

BIAS_MODES = ("multiplicative", "absolute")
QUANTITIES = ("angle", "magnitude")
REGION_MODES = ("neighbourhood", "biased", "full")
MIN_NOISE_FRACTION = 1e-3


class AttackAborted(RuntimeError):
    """Se lanza cuando la estimación del atacante falla y no se puede construir el ataque."""


@dataclass(frozen=True)
class AttackGoal:
    targets: Tuple[int, ...] = (1,)
    bias_mode: str = "multiplicative"
    magnitude: float = 0.15
    quantity: str = "angle"
    region_mode: str = "neighbourhood"

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if not self.targets:
            raise ValueError("At least one target bus is required")
        if self.bias_mode not in BIAS_MODES:
            raise ValueError(f"bias_mode must be one of {BIAS_MODES}")
        if self.quantity not in QUANTITIES:
            raise ValueError(f"quantity must be one of {QUANTITIES}")
        if self.region_mode not in REGION_MODES:
            raise ValueError(f"region_mode must be one of {REGION_MODES}")


@dataclass(frozen=True)
class GateConfig:
    margin: float = 0.8
    min_samples: int = 200
    relearn_every: int = 20
    calibration_window: int = 20
    confidence: float = 0.99
    tau_hat: Optional[float] = None
    noise_prior: Optional[float] = None  # relative meter accuracy; None reads the recorded sigma
    enabled: bool = True
    localize: bool = True
    per_meter_factor: float = 3.0

    def __post_init__(self) -> None:
        if not 0.0 < self.margin <= 1.0:
            raise ValueError("margin must lie in (0, 1]")
        if self.tau_hat is not None and self.tau_hat <= 0:
            raise ValueError("tau_hat must be positive")
        if self.noise_prior is not None and self.noise_prior <= 0:
            raise ValueError("noise_prior must be positive")
        if self.min_samples < 1 or self.relearn_every < 1 or self.calibration_window < 1:
            raise ValueError("sample counts must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class StateBias:
    """Per-bus angle and magnitude offsets, aligned with ``bus_ids``."""

    bus_ids: Tuple[int, ...]
    theta: np.ndarray
    vm: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        vm = np.asarray(self.vm, dtype=float)
        if theta.shape != (len(self.bus_ids),) or vm.shape != theta.shape:
            raise ValueError("Bias must be dimensioned to the bus count")
        object.__setattr__(self, "bus_ids", tuple(self.bus_ids))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "vm", vm)

    @classmethod
    def zeros(cls, bus_ids: Sequence[int]) -> "StateBias":
        return cls(tuple(bus_ids), np.zeros(len(bus_ids)), np.zeros(len(bus_ids)))

    @property
    def support(self) -> FrozenSet[int]:
        nonzero = (self.theta != 0) | (self.vm != 0)
        return frozenset(bus_id for bus_id, flag in zip(self.bus_ids, nonzero) if flag)

    def apply(self, state: SystemState) -> SystemState:
        return state.shifted(self.theta, self.vm)


@dataclass(frozen=True, eq=False)
class AttackerNoiseModel:
    """Meter accuracy as seen by the attacker, never taken from the residuals it gates.

    ``fraction`` is the median relative sigma of the intercepted accuracy
    metadata (or a fixed prior). With ``from_metadata`` the snapshot's own
    recorded sigma is used meter by meter, which is the operator's weighting;
    otherwise sigma = fraction × max(|z|, floor).
    """

    fraction: float
    dof: int
    from_metadata: bool = True

    def sigma_for(self, z: MeasurementSet) -> np.ndarray:
        if self.from_metadata:
            return np.asarray(z.sigma, dtype=float)
        return self.fraction * np.maximum(np.abs(z.z), SIGMA_FLOOR)

    def per_meter_threshold(self, z: MeasurementSet, factor: float = 3.0) -> np.ndarray:
        return factor * self.sigma_for(z)


@dataclass(frozen=True, eq=False)
class AttackVector:
    bias: StateBias
    z_a: MeasurementSet
    targets: FrozenSet[int]
    rewritten: FrozenSet[int]
    pseudo_residual: float
    estimate: StateEstimate
    gate: Optional[bool] = None

    def gated(self, verdict: bool) -> "AttackVector":
        return AttackVector(self.bias, self.z_a, self.targets, self.rewritten, self.pseudo_residual, self.estimate, verdict)


# -- Attacker-side estimation -----------------------------------------------------
def _attacker_config(z: MeasurementSet, noise: Optional[AttackerNoiseModel]) -> EstimatorConfig:
    if noise is None or noise.from_metadata:
        return EstimatorConfig()
    return EstimatorConfig(sigma=tuple(noise.sigma_for(z)))


def attacker_estimate(z: MeasurementSet, model: LearnedModel, noise: Optional[AttackerNoiseModel] = None) -> StateEstimate:
    """WLS over h-hat, weighted with the recorded meter sigma unless a prior overrides it."""

    try:
        return estimate_state(z, model, _attacker_config(z, noise))
    except (ObservabilityError, ValueError, linalg.LinAlgError) as exc:
        raise AttackAborted(f"Attacker-side estimation failed at t={z.t}: {exc}") from exc


def estimate_attacker_noise(
    model: LearnedModel,
    snapshots: Sequence[MeasurementSet],
    *,
    prior: Optional[float] = None,
    floor: float = MIN_NOISE_FRACTION,
) -> AttackerNoiseModel:
    """Noise level from the intercepted sigma metadata (or ``prior``) plus the model's dof.

    The learned model only contributes its bus count; a wrong model cannot
    lower its own threshold.
    """

    if not snapshots:
        raise ValueError("Noise calibration needs at least one snapshot")
    meters = len(snapshots[0].layout)
    dof = degrees_of_freedom(meters, model.n_bus)
    if dof < 1:
        raise AttackAborted(f"Learned model leaves no redundancy (dof={dof})")
    if prior is not None:
        if prior <= 0:
            raise ValueError("prior noise fraction must be positive")
        LOGGER.debug("Attacker noise prior: %.4g relative (dof=%d)", prior, dof)
        return AttackerNoiseModel(fraction=float(prior), dof=dof, from_metadata=False)
    pooled = np.concatenate(
        [snapshot.sigma / np.maximum(np.abs(snapshot.z), SIGMA_FLOOR) for snapshot in snapshots]
    )
    fraction = max(float(np.median(pooled)), floor)
    LOGGER.debug("Attacker noise from metadata: %.4g relative (dof=%d)", fraction, dof)
    return AttackerNoiseModel(fraction=fraction, dof=dof)


def attacker_threshold(noise: AttackerNoiseModel, confidence: float = 0.99) -> float:
    """tau-hat from the attacker's own dof through the chi-squared rule."""

    return float(np.sqrt(chi2.ppf(confidence, noise.dof)))


def gate_passes(r_p: float, tau_hat: float, margin: float) -> bool:
    return bool(r_p <= margin * tau_hat)


# -- Bias and crafting --------------------------------------------------------------
def build_bias(goal: AttackGoal, x_hat: SystemState, model: LearnedModel, targets: Optional[Iterable[int]] = None) -> StateBias:
    """State bias for ``goal`` around the attacker's estimate ``x_hat``."""

    bias = StateBias.zeros(model.bus_ids)
    theta, vm = bias.theta.copy(), bias.vm.copy()
    column = {bus_id: n for n, bus_id in enumerate(model.bus_ids)}
    for bus_id in goal.targets if targets is None else targets:
        if bus_id not in column:
            raise ValueError(f"Target bus {bus_id} is not in the learned model")
        n = column[bus_id]
        if goal.quantity == "magnitude":
            basis = x_hat.vm[n] if goal.bias_mode == "multiplicative" else 1.0
            vm[n] = goal.magnitude * basis
            continue
        if goal.bias_mode == "absolute":
            theta[n] = goal.magnitude
            continue
        basis = x_hat.va[n]
        if abs(basis) < 1e-9:
            # reference bus: scale the steepest angle difference to a learned neighbour
            diffs = [x_hat.va[n] - x_hat.va[column[j]] for j in model.neighbours(bus_id)]
            basis = max(diffs, key=abs) if diffs else 0.0
        theta[n] = goal.magnitude * basis
    return StateBias(model.bus_ids, theta, vm)


def attack_region(model: LearnedModel, targets: Collection[int], region_mode: str) -> FrozenSet[int]:
    if region_mode == "full":
        return frozenset(model.bus_ids)
    if region_mode == "biased":
        return frozenset(targets)
    return neighbourhood(model, targets)


def pseudo_residual(
    z_a: MeasurementSet,
    model: LearnedModel,
    x_hat: SystemState,
    c: StateBias,
    noise: Optional[AttackerNoiseModel] = None,
    *,
    refit: bool = True,
) -> float:
    """Weighted residual of z_a against h-hat, with the operator's sigma convention.

    With ``refit`` the attacker re-runs its WLS on ``z_a`` starting from
    ``x_hat + c`` and reports the residual the operator would see if h-hat
    were exact; a z_a consistent with ``x_hat + c`` stops at the start point
    with r_p = 0. ``refit=False`` gives the plain 2-norm of
    z_a - h-hat(x_hat + c).
    """

    start = c.apply(x_hat)
    if not refit:
        predicted = model.measurement_function(z_a.layout).evaluate_state(start)
        sigma = noise.sigma_for(z_a) if noise is not None else z_a.sigma
        return float(np.sqrt(np.sum(((z_a.z - predicted) / sigma) ** 2)))
    try:
        return estimate_state(z_a, model, _attacker_config(z_a, noise), initial=start).weighted_residual
    except (ObservabilityError, ValueError, linalg.LinAlgError) as exc:
        raise AttackAborted(f"Pseudo-state estimation failed at t={z_a.t}: {exc}") from exc


def craft_attack(
    model: LearnedModel,
    z: MeasurementSet,
    c: StateBias,
    *,
    region_mode: str = "neighbourhood",
    targets: Optional[Iterable[int]] = None,
    noise: Optional[AttackerNoiseModel] = None,
    estimate: Optional[StateEstimate] = None,
) -> AttackVector:
    """z_a = h-hat(x_hat + c) on the attacked sub-graph's meters, z elsewhere (bit-identical).

    The sub-graph grows from ``targets`` (the bias support when omitted). A
    zero bias without targets is the identity attack: nothing is rewritten,
    z_a = z and r_p is the attacker's clean residual. A zero bias with
    targets writes h-hat(x_hat) over their sub-graph.
    """

    if tuple(c.bus_ids) != tuple(model.bus_ids):
        raise ValueError("Bias must be dimensioned to the learned model's buses")
    estimate = estimate if estimate is not None else attacker_estimate(z, model, noise)
    support = c.support
    target_set = frozenset(targets) if targets is not None else support
    if not support <= target_set:
        raise ValueError(f"Bias touches buses outside the target set: {sorted(support - target_set)}")

    if target_set:
        region = attack_region(model, target_set, region_mode)
        rewritten = subgraph_meters(model.incidence(z.layout), region)
    else:
        rewritten = frozenset()

    values = z.z.copy()
    if rewritten:
        predicted = model.measurement_function(z.layout).evaluate_state(c.apply(estimate.state))
        rows = np.fromiter(sorted(rewritten), dtype=int)
        values[rows] = predicted[rows]
    z_a = z.with_values(values)
    r_p = pseudo_residual(z_a, model, estimate.state, c, noise)
    return AttackVector(
        bias=c, z_a=z_a, targets=target_set, rewritten=rewritten, pseudo_residual=r_p, estimate=estimate
    )


# -- Localization ---------------------------------------------------------------
def regional_residuals(
    z: MeasurementSet,
    model: LearnedModel,
    tau_m: Union[float, np.ndarray],
    *,
    estimate: Optional[StateEstimate] = None,
    noise: Optional[AttackerNoiseModel] = None,
) -> FrozenSet[int]:
    """Meters whose |fitted - measured| exceeds the per-meter alarm ``tau_m``."""

    estimate = estimate if estimate is not None else attacker_estimate(z, model, noise)
    errors = np.abs(estimate.meter_residuals)
    return frozenset(int(m) for m in np.flatnonzero(errors > np.asarray(tau_m)))


def select_attack_region(
    flagged: Collection[int],
    inc: IncidenceMatrix,
    targets: Iterable[int],
    *,
    model: Optional[LearnedModel] = None,
) -> FrozenSet[int]:
    """Largest subset of ``targets`` whose sub-graph meters avoid every flagged meter.

    With ``model`` given each target is expanded to its learned neighbourhood
    before the check.
    """

    flagged_set = frozenset(flagged)
    feasible = set()
    for bus_id in targets:
        region = neighbourhood(model, [bus_id]) if model is not None else [bus_id]
        if not subgraph_meters(inc, region) & flagged_set:
            feasible.add(bus_id)
    return frozenset(feasible)
