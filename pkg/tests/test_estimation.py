"""Pruebas del estimador WLS y de la detección de datos erróneos."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from src.core.estimation import (
    ESTIMATE_LOG_COLUMNS,
    EstimatorConfig,
    ObservabilityError,
    alarm_threshold,
    bdd_check,
    degrees_of_freedom,
    empirical_alarm_threshold,
    estimate_state,
    monitor_snapshot,
    per_meter_residual,
    residual,
    weighted_residual,
    write_estimate_log,
)
from src.core.measurements import SystemState, measure
from src.core.network import Meter, MeterLayout
from src.core.powerflow import BusInjections, solve_power_flow


@pytest.fixture(scope="module")
def base_state(ieee14):
    return solve_power_flow(ieee14, BusInjections.from_case(ieee14))


def test_noiseless_data_is_a_fixed_point(ieee14, ieee14_layout, base_state):
    z = measure(ieee14, base_state, ieee14_layout, 0.0, seed=1)
    estimate = estimate_state(z, ieee14)
    assert estimate.converged
    np.testing.assert_allclose(estimate.state.vm, base_state.vm, atol=1e-6)
    np.testing.assert_allclose(estimate.state.va, base_state.va, atol=1e-6)
    assert estimate.residual < 1e-6
    assert estimate.objective_history[-1] <= estimate.objective_history[0]


def test_clean_alarm_rate_at_one_percent_noise(ieee14, ieee14_layout, base_state):
    cfg = EstimatorConfig(confidence=0.99)
    tau = alarm_threshold(cfg, degrees_of_freedom(len(ieee14_layout), ieee14.n_bus))
    alarms = 0
    trials = 500
    for t in range(trials):
        z = measure(ieee14, base_state, ieee14_layout, 0.01, seed=21, t=t)
        alarms += monitor_snapshot(z, ieee14, cfg, tau).alarm
    assert alarms / trials <= 0.025


def test_partial_layout_is_unobservable(ieee14, base_state):
    layout = MeterLayout(tuple(Meter(kind, bus) for bus in (1, 2, 3) for kind in ("p_inj", "q_inj", "v_mag")))
    z = measure(ieee14, base_state, layout, 0.0, seed=1)
    with pytest.raises(ObservabilityError) as info:
        estimate_state(z, ieee14)
    assert info.value.unobservable


def test_residual_examples():
    assert residual([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert residual([3.0, 4.0], [0.0, 0.0]) == pytest.approx(5.0)
    rng = np.random.default_rng(0)
    z, fitted = rng.normal(size=30), rng.normal(size=30)
    assert residual(z, fitted) == pytest.approx(np.sqrt(((z - fitted) ** 2).sum()))
    with pytest.raises(ValueError):
        residual([1.0], [1.0, 2.0])


def test_per_meter_residual_sign_and_identity():
    assert per_meter_residual([1.0], [1.2], 0) == pytest.approx(0.2)
    assert per_meter_residual([0.5], [0.5], 0) == 0.0
    z, fitted = np.array([1.0, -2.0, 0.5]), np.array([1.1, -2.3, 0.1])
    squares = sum(per_meter_residual(z, fitted, m) ** 2 for m in range(3))
    assert squares == pytest.approx(residual(z, fitted) ** 2)
    assert weighted_residual(z, fitted, np.ones(3)) == pytest.approx(residual(z, fitted))
    with pytest.raises(IndexError):
        per_meter_residual(z, fitted, 3)


def test_alarm_threshold_quantiles():
    cfg = EstimatorConfig(confidence=0.99)
    assert alarm_threshold(cfg, 1) ** 2 == pytest.approx(6.635, abs=1e-3)
    assert alarm_threshold(EstimatorConfig(confidence=0.5), 400) ** 2 == pytest.approx(400, rel=0.05)
    assert alarm_threshold(cfg, 10) > alarm_threshold(EstimatorConfig(confidence=0.95), 10)
    with pytest.raises(ValueError):
        alarm_threshold(cfg, 0)


def test_bdd_uses_strict_inequality():
    assert not bdd_check(0.0, 2.0)
    assert not bdd_check(2.0, 2.0)
    assert bdd_check(4.0, 2.0)


def test_empirical_threshold():
    assert empirical_alarm_threshold(np.arange(101.0), 0.99) == pytest.approx(99.0)
    with pytest.raises(ValueError):
        empirical_alarm_threshold([], 0.99)


@pytest.mark.parametrize(
    "kwargs",
    [{"tolerance": 0.0}, {"max_iterations": 0}, {"confidence": 1.0}, {"threshold_mode": "max"}, {"sigma": (0.1, 0.0)}],
)
def test_invalid_estimator_config(kwargs):
    with pytest.raises(ValueError):
        EstimatorConfig(**kwargs)


def test_configured_sigma_must_match_meters(ieee14, ieee14_layout, base_state):
    z = measure(ieee14, base_state, ieee14_layout, 0.0, seed=1)
    with pytest.raises(ValueError):
        estimate_state(z, ieee14, EstimatorConfig(sigma=(0.01, 0.01)))


def test_estimate_log(tmp_path, ieee14, ieee14_layout, base_state):
    cfg = EstimatorConfig()
    records = [
        monitor_snapshot(measure(ieee14, base_state, ieee14_layout, 0.01, seed=3, t=t), ieee14, cfg, tau=10.0)
        for t in range(2)
    ]
    path = write_estimate_log(records, tmp_path / "log" / "estimates.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ESTIMATE_LOG_COLUMNS
    assert len(frame) == 2
    assert (frame["tau"] == 10.0).all()


def test_estimator_is_idempotent(ieee14, ieee14_layout, base_state):
    z = measure(ieee14, base_state, ieee14_layout, 0.01, seed=6)
    first = estimate_state(z, ieee14)
    second = estimate_state(z.with_values(first.fitted), ieee14)
    np.testing.assert_allclose(second.state.vm, first.state.vm, atol=1e-7)
    np.testing.assert_allclose(second.state.va, first.state.va, atol=1e-7)
    assert second.weighted_residual < 1e-5
    again = estimate_state(z, ieee14)
    np.testing.assert_array_equal(again.fitted, first.fitted)


def test_warm_start_at_a_consistent_state_stops_immediately(ieee14, ieee14_layout, base_state):
    z = measure(ieee14, base_state, ieee14_layout, 0.01, seed=6)
    first = estimate_state(z, ieee14)
    warm = estimate_state(z.with_values(first.fitted), ieee14, initial=first.state)
    assert warm.weighted_residual == 0.0
    assert warm.iterations == 1 and warm.converged
    with pytest.raises(ValueError):
        estimate_state(z, ieee14, initial=SystemState((1, 2), np.ones(2), np.zeros(2)))
