"""Pruebas de la función de medición, el ruido y el CSV de flujo."""

from __future__ import annotations

import numpy as np
import pytest

from src.core.measurements import (
    MeasurementFunction,
    MeasurementSet,
    StreamFormatError,
    SystemState,
    measure,
    measurement_function,
    read_stream_csv,
    write_stream_csv,
)
from src.core.network import Meter, MeterLayout, NetworkCase
from src.core.powerflow import BusInjections, solve_power_flow


@pytest.fixture(scope="module")
def base_state(ieee14):
    return solve_power_flow(ieee14, BusInjections.from_case(ieee14))


def test_noiseless_measurements_equal_h(ieee14, ieee14_layout, base_state):
    z = measure(ieee14, base_state, ieee14_layout, noise_fraction=0.0, seed=3)
    h = measurement_function(ieee14, ieee14_layout).evaluate_state(base_state)
    np.testing.assert_array_equal(z.z, h)
    assert np.all(z.sigma > 0)
    assert z.z.shape == (len(ieee14_layout),)


def test_same_seed_same_readings(ieee14, ieee14_layout, base_state):
    first = measure(ieee14, base_state, ieee14_layout, 0.01, seed=11, t=5)
    second = measure(ieee14, base_state, ieee14_layout, 0.01, seed=11, t=5)
    other = measure(ieee14, base_state, ieee14_layout, 0.01, seed=12, t=5)
    np.testing.assert_array_equal(first.z, second.z)
    assert not np.array_equal(first.z, other.z)


def test_empirical_noise_matches_configured_sigma(ieee14, ieee14_layout, base_state):
    h = measurement_function(ieee14, ieee14_layout).evaluate_state(base_state)
    standardized = []
    for t in range(125):
        z = measure(ieee14, base_state, ieee14_layout, 0.01, seed=1, t=t)
        standardized.append((z.z - h) / z.sigma)
    sample = np.concatenate(standardized)
    assert sample.size > 10_000
    assert np.std(sample) == pytest.approx(1.0, rel=0.05)


def test_negative_noise_rejected(ieee14, ieee14_layout, base_state):
    with pytest.raises(ValueError):
        measure(ieee14, base_state, ieee14_layout, -0.1, seed=1)


def test_measurement_set_validation(ieee14_layout):
    n_meter = len(ieee14_layout)
    with pytest.raises(ValueError):
        MeasurementSet(t=0.0, z=np.zeros(n_meter), sigma=np.zeros(n_meter), layout=ieee14_layout)
    with pytest.raises(ValueError):
        MeasurementSet(t=0.0, z=np.zeros(3), sigma=np.ones(3), layout=ieee14_layout)


def test_state_is_read_only():
    state = SystemState((1, 2), [1.0, 0.98], [0.0, -0.02])
    with pytest.raises(ValueError):
        state.vm[0] = 2.0
    with pytest.raises(ValueError):
        SystemState((1, 2), [1.0, 0.0], [0.0, 0.0])


def test_measurement_jacobian_matches_finite_differences(ieee14):
    meters = []
    for kind in ("p_flow", "q_flow"):
        meters += [Meter(kind, br.from_bus, br.to_bus) for br in ieee14.branches]
        meters += [Meter(kind, br.to_bus, br.from_bus) for br in ieee14.branches]
    for kind in ("p_inj", "q_inj", "v_mag"):
        meters += [Meter(kind, bus_id) for bus_id in ieee14.bus_ids]
    func = measurement_function(ieee14, MeterLayout(tuple(meters)))
    rng = np.random.default_rng(5)
    step = 1e-6
    for _ in range(100):
        vm = rng.uniform(0.9, 1.1, ieee14.n_bus)
        va = rng.uniform(-0.3, 0.3, ieee14.n_bus)
        h_va, h_vm = func.jacobian(vm, va)
        eye = np.eye(ieee14.n_bus) * step
        num_va = np.column_stack([(func.evaluate(vm, va + d) - func.evaluate(vm, va - d)) / (2 * step) for d in eye])
        num_vm = np.column_stack([(func.evaluate(vm + d, va) - func.evaluate(vm - d, va)) / (2 * step) for d in eye])
        np.testing.assert_allclose(h_va, num_va, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(h_vm, num_vm, rtol=1e-5, atol=1e-6)


def test_flow_meter_without_branch_reads_zero(ieee14):
    reduced = NetworkCase(
        buses=ieee14.buses,
        branches=tuple(br for br in ieee14.branches if br.pair != frozenset((1, 2))),
        name="no-1-2",
    )
    layout = MeterLayout((Meter("p_flow", 1, 2), Meter("v_mag", 1)))
    func = MeasurementFunction(reduced.branch_set(), layout)
    assert func.missing_meters == ("p_flow@1-2",)
    vm, va = np.full(14, 1.02), np.linspace(0, -0.2, 14)
    assert func.evaluate(vm, va)[0] == 0.0
    h_va, h_vm = func.jacobian(vm, va)
    assert not h_va[0].any() and not h_vm[0].any()


def test_stream_csv_keeps_snapshots(tmp_path, ieee14, ieee14_layout, base_state):
    snapshots = [measure(ieee14, base_state, ieee14_layout, 0.01, seed=2, t=t) for t in range(3)]
    path = write_stream_csv(snapshots, tmp_path / "stream.csv")
    loaded = read_stream_csv(path)
    assert [s.t for s in loaded] == [0.0, 1.0, 2.0]
    assert loaded[0].layout.labels == ieee14_layout.labels
    np.testing.assert_allclose(loaded[2].z, snapshots[2].z)


def test_stream_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,meter_id,value\n0,v_mag@1,1.0\n", encoding="utf-8")
    with pytest.raises(StreamFormatError):
        read_stream_csv(path)
