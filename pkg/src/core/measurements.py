"""System states, the AC measurement function h(x) and noisy meter snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.network import BranchSet, MeterLayout, NetworkCase, build_admittance
from src.utils.csv_validator import STREAM_COLUMNS, validate_stream_frame
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

SIGMA_FLOOR = 0.01
# Nominal noise fraction recorded when readings are generated noise-free.
NOMINAL_NOISE_FRACTION = 1e-3
_NOISE_STREAM = 1


class StreamFormatError(ValueError):
    """Se lanza cuando un CSV de mediciones no tiene el formato esperado."""


@dataclass(frozen=True, eq=False)
class SystemState:
    """Voltage magnitude (p.u.) and angle (rad) per bus, aligned with ``bus_ids``."""

    bus_ids: Tuple[int, ...]
    vm: np.ndarray
    va: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "bus_ids", tuple(int(b) for b in self.bus_ids))
        vm = np.asarray(self.vm, dtype=float).copy()
        va = np.asarray(self.va, dtype=float).copy()
        if vm.shape != (len(self.bus_ids),) or va.shape != vm.shape:
            raise ValueError("State vectors must have one entry per bus")
        if np.any(vm <= 0):
            raise ValueError("Voltage magnitudes must be positive")
        vm.setflags(write=False)
        va.setflags(write=False)
        object.__setattr__(self, "vm", vm)
        object.__setattr__(self, "va", va)

    @classmethod
    def flat(cls, bus_ids: Sequence[int]) -> "SystemState":
        n_bus = len(bus_ids)
        return cls(tuple(bus_ids), np.ones(n_bus), np.zeros(n_bus))

    def index(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)

    def shifted(self, d_va: np.ndarray, d_vm: Optional[np.ndarray] = None) -> "SystemState":
        d_vm = np.zeros_like(self.vm) if d_vm is None else d_vm
        return SystemState(self.bus_ids, self.vm + d_vm, self.va + d_va)

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """One timestamped snapshot of meter readings ordered by ``layout``."""

    t: float
    z: np.ndarray
    sigma: np.ndarray
    layout: MeterLayout

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if z.shape != (len(self.layout),) or sigma.shape != z.shape:
            raise ValueError(f"Snapshot t={self.t}: z and sigma must match the {len(self.layout)} meters of the layout")
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ValueError(f"Snapshot t={self.t}: noise standard deviations must be strictly positive")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "sigma", sigma)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / (self.sigma * self.sigma)

    def with_values(self, z: np.ndarray) -> "MeasurementSet":
        return MeasurementSet(t=self.t, z=np.asarray(z, dtype=float), sigma=self.sigma, layout=self.layout)


class MeasurementFunction:
    """Evaluate h(x) and its Jacobian for a branch set and meter layout.

    Flow meters whose bus pair is not a branch of ``branches`` evaluate to
    zero with zero Jacobian rows (a learned model may omit a true line).
    """

    def __init__(self, branches: BranchSet, layout: MeterLayout) -> None:
        self.branches = branches
        self.layout = layout
        self.admittance = build_admittance(branches)
        column = {bus_id: n for n, bus_id in enumerate(branches.bus_ids)}
        lookup = branches.pair_lookup()

        self._inj_rows: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self._flow_rows: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        missing: List[str] = []

        for kind in ("p_inj", "q_inj", "v_mag"):
            rows = layout.indices(kind)
            buses = np.array([column[layout[m].bus] for m in rows], dtype=int)
            self._inj_rows[kind] = (rows, buses)

        for kind in ("p_flow", "q_flow"):
            rows, branch_idx, from_end = [], [], []
            for m in layout.indices(kind):
                meter = layout[m]
                key = (column[meter.bus], column[meter.to_bus])
                if key not in lookup:
                    missing.append(meter.label)
                    continue
                k, at_from = lookup[key]
                rows.append(m)
                branch_idx.append(k)
                from_end.append(at_from)
            self._flow_rows[kind] = (
                np.array(rows, dtype=int),
                np.array(branch_idx, dtype=int),
                np.array(from_end, dtype=bool),
            )
        self.missing_meters: Tuple[str, ...] = tuple(missing)
        if missing:
            LOGGER.debug("%d flow meters have no matching branch; they evaluate to zero", len(missing))

    @property
    def n_bus(self) -> int:
        return self.branches.n_bus

    def _complex_parts(self, vm: np.ndarray, va: np.ndarray):
        adm = self.admittance
        voltage = vm * np.exp(1j * va)
        ibus = adm.ybus @ voltage
        i_from = adm.yf @ voltage
        i_to = adm.yt @ voltage
        v_from = adm.cf @ voltage
        v_to = adm.ct @ voltage
        return voltage, ibus, i_from, i_to, v_from, v_to

    def evaluate(self, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
        voltage, ibus, i_from, i_to, v_from, v_to = self._complex_parts(vm, va)
        s_bus = voltage * np.conj(ibus)
        s_from = v_from * np.conj(i_from)
        s_to = v_to * np.conj(i_to)

        h = np.zeros(len(self.layout))
        rows, buses = self._inj_rows["p_inj"]
        h[rows] = s_bus.real[buses]
        rows, buses = self._inj_rows["q_inj"]
        h[rows] = s_bus.imag[buses]
        rows, buses = self._inj_rows["v_mag"]
        h[rows] = vm[buses]
        for kind, part in (("p_flow", np.real), ("q_flow", np.imag)):
            rows, k, at_from = self._flow_rows[kind]
            h[rows] = part(np.where(at_from, s_from[k], s_to[k]))
        return h

    def evaluate_state(self, state: SystemState) -> np.ndarray:
        return self.evaluate(state.vm, state.va)

    def jacobian(self, vm: np.ndarray, va: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (dh/dθ, dh/dV), each meters x buses."""

        adm = self.admittance
        voltage, ibus, i_from, i_to, v_from, v_to = self._complex_parts(vm, va)
        v_norm = voltage / vm

        ds_bus_dvm = voltage[:, None] * np.conj(adm.ybus * v_norm[None, :]) + np.diag(np.conj(ibus) * v_norm)
        ds_bus_dva = 1j * voltage[:, None] * np.conj(np.diag(ibus) - adm.ybus * voltage[None, :])

        def branch_derivatives(y_br, c_br, i_br, v_br):
            d_va = 1j * (np.conj(i_br)[:, None] * c_br * voltage[None, :] - v_br[:, None] * np.conj(y_br * voltage[None, :]))
            d_vm = v_br[:, None] * np.conj(y_br * v_norm[None, :]) + np.conj(i_br)[:, None] * c_br * v_norm[None, :]
            return d_va, d_vm

        dsf_dva, dsf_dvm = branch_derivatives(adm.yf, adm.cf, i_from, v_from)
        dst_dva, dst_dvm = branch_derivatives(adm.yt, adm.ct, i_to, v_to)

        n_meter = len(self.layout)
        h_va = np.zeros((n_meter, self.n_bus))
        h_vm = np.zeros((n_meter, self.n_bus))

        rows, buses = self._inj_rows["p_inj"]
        h_va[rows] = ds_bus_dva.real[buses]
        h_vm[rows] = ds_bus_dvm.real[buses]
        rows, buses = self._inj_rows["q_inj"]
        h_va[rows] = ds_bus_dva.imag[buses]
        h_vm[rows] = ds_bus_dvm.imag[buses]
        rows, buses = self._inj_rows["v_mag"]
        h_vm[rows, buses] = 1.0

        for kind, part in (("p_flow", np.real), ("q_flow", np.imag)):
            rows, k, at_from = self._flow_rows[kind]
            h_va[rows] = part(np.where(at_from[:, None], dsf_dva[k], dst_dva[k]))
            h_vm[rows] = part(np.where(at_from[:, None], dsf_dvm[k], dst_dvm[k]))
        return h_va, h_vm


def measurement_function(case: NetworkCase, layout: MeterLayout) -> MeasurementFunction:
    return MeasurementFunction(case.branch_set(), layout)


def measure(
    case: NetworkCase,
    state: SystemState,
    layout: MeterLayout,
    noise_fraction: float,
    seed: int,
    t: float = 0.0,
) -> MeasurementSet:
    """z = h(x) + e with e ~ N(0, σ²), σ = noise_fraction × max(|h|, 0.01)."""

    if noise_fraction < 0:
        raise ValueError("noise_fraction must be non-negative")
    h = measurement_function(case, layout).evaluate_state(state)
    scale = np.maximum(np.abs(h), SIGMA_FLOOR)
    z = h.copy()
    if noise_fraction > 0:
        rng = np.random.default_rng([int(seed), int(round(t)), _NOISE_STREAM])
        z = h + rng.normal(0.0, 1.0, size=h.shape) * noise_fraction * scale
    sigma = max(noise_fraction, NOMINAL_NOISE_FRACTION) * scale
    return MeasurementSet(t=float(t), z=z, sigma=sigma, layout=layout)


# -- Stream CSV ------------------------------------------------------------------
def stream_frame(snapshots: Iterable[MeasurementSet]) -> pd.DataFrame:
    records = []
    for snapshot in snapshots:
        for meter, value, sigma in zip(snapshot.layout, snapshot.z, snapshot.sigma):
            records.append((snapshot.t, meter.label, meter.kind, float(value), float(sigma)))
    return pd.DataFrame.from_records(records, columns=STREAM_COLUMNS)


def write_stream_csv(snapshots: Iterable[MeasurementSet], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stream_frame(snapshots).to_csv(path, index=False)
    return path


def read_stream_csv(source) -> List[MeasurementSet]:
    """Read a ``t,meter_id,kind,value,sigma`` CSV back into snapshots."""

    try:
        frame = pd.read_csv(source)
    except (OSError, pd.errors.ParserError) as exc:
        raise StreamFormatError(f"No se pudo leer el flujo de mediciones: {exc}") from exc
    report = validate_stream_frame(frame)
    if report["errors"]:
        raise StreamFormatError("; ".join(report["errors"]))

    snapshots: List[MeasurementSet] = []
    layout: Optional[MeterLayout] = None
    for t, group in frame.groupby("t", sort=True):
        labels = tuple(group["meter_id"].astype(str))
        if layout is None or layout.labels != labels:
            layout = MeterLayout.from_labels(labels)
        snapshots.append(
            MeasurementSet(
                t=float(t),
                z=group["value"].to_numpy(dtype=float),
                sigma=group["sigma"].to_numpy(dtype=float),
                layout=layout,
            )
        )
    LOGGER.info("Read %d snapshots from measurement stream", len(snapshots))
    return snapshots
