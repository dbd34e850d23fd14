"""Weighted-least-squares state estimation and residual-based bad-data detection.

The same estimator serves the operator (true case) and the attacker (learned
model): ``estimate_state`` only needs an object exposing ``branch_set()``,
``bus_ids`` and ``reference_bus``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.stats import chi2

from src.core.measurements import MeasurementFunction, MeasurementSet, SystemState
from src.core.network import NetworkCase, validate_layout
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

THRESHOLD_MODES = ("chi2", "empirical")
ESTIMATE_LOG_COLUMNS = ["t", "r", "tau", "alarm", "iterations", "converged", "r_raw"]
_MAX_HALVINGS = 12


class ObservabilityError(RuntimeError):
    """Se lanza cuando el Jacobiano ponderado es deficiente en rango (estados no observables)."""

    def __init__(self, message: str, unobservable: Sequence[str]) -> None:
        super().__init__(f"{message}: {', '.join(unobservable)}")
        self.unobservable = tuple(unobservable)


@dataclass(frozen=True)
class EstimatorConfig:
    tolerance: float = 1e-8
    max_iterations: int = 50
    confidence: float = 0.99
    threshold_mode: str = "chi2"
    # Optional per-meter sigma overriding the snapshot's own sigma.
    sigma: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.sigma is not None:
            if any(not np.isfinite(s) or s <= 0 for s in self.sigma):
                raise ValueError("weights must be positive (sigma > 0)")
            object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))

    def weights_for(self, z: MeasurementSet) -> np.ndarray:
        if self.sigma is None:
            return z.weights
        sigma = np.asarray(self.sigma)
        if sigma.shape != z.z.shape:
            raise ValueError("Configured sigma does not match the meter count")
        return 1.0 / (sigma * sigma)


@dataclass(frozen=True, eq=False)
class StateEstimate:
    state: SystemState
    fitted: np.ndarray
    residual: float
    weighted_residual: float
    meter_residuals: np.ndarray
    iterations: int
    converged: bool
    objective_history: Tuple[float, ...]


@dataclass(frozen=True)
class EstimateRecord:
    """One row of the operator's estimate log."""

    t: float
    r: float
    tau: float
    alarm: bool
    iterations: int
    converged: bool
    r_raw: float


# -- Residuals and thresholds ------------------------------------------------------
def residual(z: np.ndarray, fitted: np.ndarray) -> float:
    """Euclidean norm of ``z - fitted``."""

    z, fitted = np.asarray(z, dtype=float), np.asarray(fitted, dtype=float)
    if z.shape != fitted.shape:
        raise ValueError(f"Length mismatch: {z.shape} vs {fitted.shape}")
    return float(np.linalg.norm(z - fitted))


def weighted_residual(z: np.ndarray, fitted: np.ndarray, weights: np.ndarray) -> float:
    diff = np.asarray(z, dtype=float) - np.asarray(fitted, dtype=float)
    return float(np.sqrt(np.sum(weights * diff * diff)))


def per_meter_residual(z: np.ndarray, fitted: np.ndarray, m: int) -> float:
    """Signed error of meter ``m``: fitted minus measured."""

    if not 0 <= m < len(z) or len(z) != len(fitted):
        raise IndexError(f"Meter index {m} out of range for {len(z)} meters")
    return float(fitted[m] - z[m])


def degrees_of_freedom(meter_count: int, bus_count: int) -> int:
    return int(meter_count - (2 * bus_count - 1))


def alarm_threshold(cfg: EstimatorConfig, dof: int) -> float:
    """sqrt of the chi-squared quantile, comparable with the weighted residual."""

    if dof < 1:
        raise ValueError(f"Degrees of freedom must be >= 1 (got {dof}); add meters")
    return float(np.sqrt(chi2.ppf(cfg.confidence, dof)))


def empirical_alarm_threshold(residuals: Iterable[float], confidence: float) -> float:
    """Quantile of residuals observed on a clean calibration window."""

    values = np.asarray(list(residuals), dtype=float)
    if values.size == 0:
        raise ValueError("Calibration window is empty")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    return float(np.quantile(values, confidence))


def bdd_check(r: float, tau: float) -> bool:
    return bool(r > tau)


# -- Estimator ------------------------------------------------------------------
def _state_labels(bus_ids: Sequence[int], non_ref: np.ndarray) -> List[str]:
    return [f"theta@{bus_ids[n]}" for n in non_ref] + [f"V@{bus_id}" for bus_id in bus_ids]


def _check_observability(h_w: np.ndarray, labels: Sequence[str]) -> None:
    if h_w.shape[0] < h_w.shape[1]:
        raise ObservabilityError("Fewer meters than states", labels)
    _, singular, vt = linalg.svd(h_w, full_matrices=True)
    tol = singular.max(initial=0.0) * max(h_w.shape) * np.finfo(float).eps * 1e3
    rank = int(np.sum(singular > tol))
    if rank == h_w.shape[1]:
        return
    null_space = vt[rank:]
    involved = np.flatnonzero(np.abs(null_space).max(axis=0) > 1e-6)
    raise ObservabilityError("Meter layout leaves states unobservable", [labels[k] for k in involved])


def estimate_state(
    z: MeasurementSet,
    model,
    cfg: Optional[EstimatorConfig] = None,
    *,
    initial: Optional[SystemState] = None,
) -> StateEstimate:
    """Gauss-Newton WLS with step halving on objective increase.

    Starts flat unless ``initial`` is given; the reference angle keeps its
    starting value.
    """

    cfg = cfg or EstimatorConfig()
    layout = z.layout
    if isinstance(model, NetworkCase):
        validate_layout(model, layout)
    hfun = MeasurementFunction(model.branch_set(), layout)

    bus_ids = tuple(model.bus_ids)
    n_bus = len(bus_ids)
    ref = bus_ids.index(model.reference_bus)
    non_ref = np.array([n for n in range(n_bus) if n != ref], dtype=int)
    labels = _state_labels(bus_ids, non_ref)

    weights = cfg.weights_for(z)
    sqrt_w = np.sqrt(weights)
    if initial is None:
        vm, va = np.ones(n_bus), np.zeros(n_bus)
    else:
        if tuple(initial.bus_ids) != bus_ids:
            raise ValueError("initial state buses do not match the model")
        vm, va = np.array(initial.vm, dtype=float), np.array(initial.va, dtype=float)

    def objective(h: np.ndarray) -> float:
        diff = z.z - h
        return float(np.sum(weights * diff * diff))

    def stacked_jacobian(vm_: np.ndarray, va_: np.ndarray) -> np.ndarray:
        h_va, h_vm = hfun.jacobian(vm_, va_)
        return np.hstack([h_va[:, non_ref], h_vm])

    jac = stacked_jacobian(vm, va)
    _check_observability(sqrt_w[:, None] * jac, labels)

    h = hfun.evaluate(vm, va)
    j_value = objective(h)
    history = [j_value]
    converged = False
    iteration = 0
    n_theta = non_ref.size

    while iteration < cfg.max_iterations:
        iteration += 1
        if iteration > 1:
            jac = stacked_jacobian(vm, va)
        dx, *_ = linalg.lstsq(sqrt_w[:, None] * jac, sqrt_w * (z.z - h), lapack_driver="gelsy")

        step = 1.0
        for _ in range(_MAX_HALVINGS):
            va_try = va.copy()
            va_try[non_ref] += step * dx[:n_theta]
            vm_try = vm + step * dx[n_theta:]
            if np.all(vm_try > 0):
                h_try = hfun.evaluate(vm_try, va_try)
                j_try = objective(h_try)
                if j_try <= j_value:
                    break
            step *= 0.5
        else:
            LOGGER.debug("WLS line search exhausted at iteration %d", iteration)
            # no descent left: stationary only if the full step was already negligible
            converged = float(np.linalg.norm(dx)) < np.sqrt(cfg.tolerance)
            break

        va, vm, h, j_value = va_try, vm_try, h_try, j_try
        history.append(j_value)
        update_norm = step * float(np.linalg.norm(dx))
        LOGGER.debug("WLS iteration %d: J=%.6e |dx|=%.3e step=%.3g", iteration, j_value, update_norm, step)
        if update_norm < cfg.tolerance:
            converged = True
            break

    if not converged:
        LOGGER.warning("WLS estimation did not converge in %d iterations", cfg.max_iterations)

    state = SystemState(bus_ids, vm, va)
    return StateEstimate(
        state=state,
        fitted=h,
        residual=residual(z.z, h),
        weighted_residual=float(np.sqrt(j_value)),
        meter_residuals=h - z.z,
        iterations=iteration,
        converged=converged,
        objective_history=tuple(history),
    )


def monitor_snapshot(z: MeasurementSet, model, cfg: EstimatorConfig, tau: float) -> EstimateRecord:
    """Estimate one snapshot and apply the BDD test against ``tau``."""

    estimate = estimate_state(z, model, cfg)
    return EstimateRecord(
        t=z.t,
        r=estimate.weighted_residual,
        tau=tau,
        alarm=bdd_check(estimate.weighted_residual, tau),
        iterations=estimate.iterations,
        converged=estimate.converged,
        r_raw=estimate.residual,
    )


def estimate_log_frame(records: Iterable[EstimateRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(record) for record in records], columns=ESTIMATE_LOG_COLUMNS)


def write_estimate_log(records: Iterable[EstimateRecord], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    estimate_log_frame(records).to_csv(path, index=False)
    return path
