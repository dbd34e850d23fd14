"""AC branch flows and a full Newton-Raphson power-flow solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import linalg

from src.core.measurements import SystemState
from src.core.network import Branch, NetworkCase, build_admittance
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 20


class PowerFlowDivergence(RuntimeError):
    """Se lanza cuando Newton-Raphson no converge; conserva la última norma de desbalance."""

    def __init__(self, message: str, mismatch_norm: float, iterations: int) -> None:
        super().__init__(f"{message} (mismatch {mismatch_norm:.3e} after {iterations} iterations)")
        self.mismatch_norm = mismatch_norm
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class BusInjections:
    """Net specified injections (generation minus load) per bus, per-unit."""

    bus_ids: Tuple[int, ...]
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != (len(self.bus_ids),) or q.shape != p.shape:
            raise ValueError("Injection vectors must have one entry per bus")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("Injections must be finite")
        object.__setattr__(self, "bus_ids", tuple(self.bus_ids))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_case(cls, case: NetworkCase) -> "BusInjections":
        """Base-case injections: scheduled generation minus base load."""

        p = np.array([bus.p_gen - bus.p_load for bus in case.buses])
        q = np.array([-bus.q_load for bus in case.buses])
        return cls(case.bus_ids, p, q)

    @classmethod
    def zeros(cls, bus_ids: Sequence[int]) -> "BusInjections":
        return cls(tuple(bus_ids), np.zeros(len(bus_ids)), np.zeros(len(bus_ids)))


def branch_flow(state: SystemState, branch: Branch) -> Tuple[float, float]:
    """From-end active and reactive flow of ``branch``; the from voltage is divided by the tap."""

    i, j = state.index(branch.from_bus), state.index(branch.to_bus)
    u_i = state.vm[i] / branch.tap
    v_j = state.vm[j]
    delta = state.va[i] - state.va[j]
    g, b = branch.g, branch.b
    p_ij = u_i * u_i * g - u_i * v_j * (g * np.cos(delta) + b * np.sin(delta))
    q_ij = -u_i * u_i * (b + branch.b_sh) + u_i * v_j * (b * np.cos(delta) - g * np.sin(delta))
    return float(p_ij), float(q_ij)


def bus_power(case: NetworkCase, state: SystemState) -> np.ndarray:
    """Complex net injection S = V conj(Ybus V) at every bus."""

    voltage = state.voltage
    return voltage * np.conj(build_admittance(case).ybus @ voltage)


def _bus_sets(case: NetworkCase) -> Tuple[np.ndarray, np.ndarray]:
    pv = np.array([n for n, bus in enumerate(case.buses) if bus.type == "PV"], dtype=int)
    pq = np.array([n for n, bus in enumerate(case.buses) if bus.type == "PQ"], dtype=int)
    return pv, pq


def power_flow_jacobian(case: NetworkCase, state: SystemState) -> np.ndarray:
    """Jacobian of [ΔP(pv+pq); ΔQ(pq)] with respect to [θ(pv+pq); V(pq)]."""

    pv, pq = _bus_sets(case)
    pvpq = np.r_[pv, pq]
    ybus = build_admittance(case).ybus
    return _jacobian(ybus, state.voltage, pvpq, pq)


def _jacobian(ybus: np.ndarray, voltage: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    ibus = ybus @ voltage
    v_norm = voltage / np.abs(voltage)
    ds_dvm = voltage[:, None] * np.conj(ybus * v_norm[None, :]) + np.diag(np.conj(ibus) * v_norm)
    ds_dva = 1j * voltage[:, None] * np.conj(np.diag(ibus) - ybus * voltage[None, :])
    j11 = ds_dva[np.ix_(pvpq, pvpq)].real
    j12 = ds_dvm[np.ix_(pvpq, pq)].real
    j21 = ds_dva[np.ix_(pq, pvpq)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def _mismatch(ybus, voltage, s_spec, pvpq, pq) -> np.ndarray:
    mis = voltage * np.conj(ybus @ voltage) - s_spec
    return np.r_[mis[pvpq].real, mis[pq].imag]


def newton_raphson(
    case: NetworkCase,
    injections: BusInjections,
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> Tuple[SystemState, int]:
    """Solve the AC power flow; returns the state and the iterations used."""

    if tuple(injections.bus_ids) != case.bus_ids:
        raise ValueError("Injections must be aligned with the case bus order")

    ybus = build_admittance(case).ybus
    pv, pq = _bus_sets(case)
    pvpq = np.r_[pv, pq]
    n_pvpq = pvpq.size

    vm = np.array([bus.v_set if bus.type in ("slack", "PV") else 1.0 for bus in case.buses])
    va = np.zeros(case.n_bus)
    s_spec = injections.p + 1j * injections.q

    voltage = vm * np.exp(1j * va)
    f = _mismatch(ybus, voltage, s_spec, pvpq, pq)
    norm = float(np.linalg.norm(f, np.inf)) if f.size else 0.0
    iteration = 0
    while norm >= tolerance:
        if iteration >= max_iterations:
            raise PowerFlowDivergence("Power flow did not converge", norm, iteration)
        iteration += 1
        jac = _jacobian(ybus, voltage, pvpq, pq)
        try:
            dx = -linalg.solve(jac, f)
        except (linalg.LinAlgError, ValueError) as exc:
            raise PowerFlowDivergence("Singular power-flow Jacobian", norm, iteration) from exc
        va[pvpq] += dx[:n_pvpq]
        vm[pq] += dx[n_pvpq:]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            raise PowerFlowDivergence("Voltage magnitudes left the feasible region", norm, iteration)
        voltage = vm * np.exp(1j * va)
        f = _mismatch(ybus, voltage, s_spec, pvpq, pq)
        norm = float(np.linalg.norm(f, np.inf))
        LOGGER.debug("NR iteration %d: max mismatch %.3e", iteration, norm)

    return SystemState(case.bus_ids, vm, va), iteration


def solve_power_flow(case: NetworkCase, injections: BusInjections, **kwargs) -> SystemState:
    """Newton-Raphson solution with max |mismatch| below tolerance and slack angle 0."""

    state, iterations = newton_raphson(case, injections, **kwargs)
    LOGGER.debug("Power flow for %s converged in %d iterations", case.name, iterations)
    return state
