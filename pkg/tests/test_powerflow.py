"""Pruebas del flujo de potencia AC y de los flujos por rama."""

from __future__ import annotations

import numpy as np
import pytest

from src.core.measurements import SystemState, measurement_function
from src.core.network import Branch, Meter, MeterLayout
from src.core.powerflow import (
    BusInjections,
    PowerFlowDivergence,
    branch_flow,
    bus_power,
    newton_raphson,
    power_flow_jacobian,
    solve_power_flow,
)


def _both_end_layout(case):
    meters = [Meter("p_flow", br.from_bus, br.to_bus) for br in case.branches]
    meters += [Meter("p_flow", br.to_bus, br.from_bus) for br in case.branches]
    meters += [Meter("p_inj", bus_id) for bus_id in case.bus_ids]
    return MeterLayout(tuple(meters))


@pytest.mark.parametrize("b_sh, expected_q", [(0.0, 0.0), (0.05, -0.05)])
def test_branch_flow_without_angle_difference(b_sh, expected_q):
    branch = Branch(1, 2, r=0.01, x=0.1, b_sh=b_sh)
    state = SystemState((1, 2), np.ones(2), np.full(2, 0.3))
    p_ij, q_ij = branch_flow(state, branch)
    assert p_ij == pytest.approx(0.0, abs=1e-12)
    assert q_ij == pytest.approx(expected_q, abs=1e-12)


def test_zero_injections_give_flat_profile(two_bus):
    state = solve_power_flow(two_bus, BusInjections.zeros(two_bus.bus_ids))
    np.testing.assert_allclose(state.vm, 1.0, atol=1e-10)
    np.testing.assert_allclose(state.va, 0.0, atol=1e-10)


def test_two_bus_matches_grid_search(two_bus):
    injections = BusInjections(two_bus.bus_ids, np.array([0.0, -0.5]), np.array([0.0, -0.1]))
    state = solve_power_flow(two_bus, injections)

    g, b = 5.0, -15.0

    def mismatch(v2, th2):
        p2 = v2 * v2 * g - v2 * (g * np.cos(th2) + b * np.sin(th2))
        q2 = -v2 * v2 * b - v2 * (g * np.sin(th2) - b * np.cos(th2))
        return np.hypot(p2 + 0.5, q2 + 0.1)

    v_center, th_center, span = 0.95, -0.05, 0.1
    for _ in range(4):
        v_grid, th_grid = np.meshgrid(
            np.linspace(v_center - span, v_center + span, 201),
            np.linspace(th_center - span, th_center + span, 201),
            indexing="ij",
        )
        cost = mismatch(v_grid, th_grid)
        best = np.unravel_index(np.argmin(cost), cost.shape)
        v_center, th_center = v_grid[best], th_grid[best]
        span /= 20.0

    assert state.vm[1] == pytest.approx(v_center, abs=1e-5)
    assert state.va[1] == pytest.approx(th_center, abs=1e-5)
    assert state.va[0] == 0.0


def test_ieee14_base_case_converges_quickly(ieee14):
    injections = BusInjections.from_case(ieee14)
    state, iterations = newton_raphson(ieee14, injections)
    assert iterations <= 10
    assert state.va[ieee14.slack_index] == 0.0
    s_bus = bus_power(ieee14, state)
    for n, bus in enumerate(ieee14.buses):
        if bus.type != "slack":
            assert s_bus[n].real == pytest.approx(injections.p[n], abs=1e-7)
        if bus.type == "PQ":
            assert s_bus[n].imag == pytest.approx(injections.q[n], abs=1e-7)
        else:
            assert state.vm[n] == pytest.approx(bus.v_set)


def test_branch_flow_agrees_with_measurement_function(ieee14):
    state = solve_power_flow(ieee14, BusInjections.from_case(ieee14))
    layout = _both_end_layout(ieee14)
    h = measurement_function(ieee14, layout).evaluate_state(state)
    for k, branch in enumerate(ieee14.branches):
        p_ij, _ = branch_flow(state, branch)
        assert h[k] == pytest.approx(p_ij, abs=1e-9)


def test_injections_balance_branch_flows(ieee14):
    state = solve_power_flow(ieee14, BusInjections.from_case(ieee14))
    layout = _both_end_layout(ieee14)
    h = measurement_function(ieee14, layout).evaluate_state(state)
    for bus_id in ieee14.bus_ids:
        leaving = sum(h[m] for m, meter in enumerate(layout) if meter.kind == "p_flow" and meter.bus == bus_id)
        assert leaving == pytest.approx(h[layout.index_of(f"p_inj@{bus_id}")], abs=1e-9)


def test_power_flow_jacobian_matches_finite_differences(ieee14):
    rng = np.random.default_rng(7)
    pv = [n for n, bus in enumerate(ieee14.buses) if bus.type == "PV"]
    pq = [n for n, bus in enumerate(ieee14.buses) if bus.type == "PQ"]
    pvpq = pv + pq

    def residual(vm, va):
        s_bus = bus_power(ieee14, SystemState(ieee14.bus_ids, vm, va))
        return np.r_[s_bus.real[pvpq], s_bus.imag[pq]]

    step = 1e-6
    for _ in range(100):
        vm = rng.uniform(0.9, 1.1, ieee14.n_bus)
        va = rng.uniform(-0.3, 0.3, ieee14.n_bus)
        va[ieee14.slack_index] = 0.0
        analytic = power_flow_jacobian(ieee14, SystemState(ieee14.bus_ids, vm, va))
        numeric = np.zeros_like(analytic)
        for col, n in enumerate(pvpq):
            hi, lo = va.copy(), va.copy()
            hi[n] += step
            lo[n] -= step
            numeric[:, col] = (residual(vm, hi) - residual(vm, lo)) / (2 * step)
        for col, n in enumerate(pq, start=len(pvpq)):
            hi, lo = vm.copy(), vm.copy()
            hi[n] += step
            lo[n] -= step
            numeric[:, col] = (residual(hi, va) - residual(lo, va)) / (2 * step)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)


def test_divergence_reports_mismatch(two_bus):
    heavy = BusInjections(two_bus.bus_ids, np.array([0.0, -50.0]), np.array([0.0, -20.0]))
    with pytest.raises(PowerFlowDivergence) as info:
        solve_power_flow(two_bus, heavy, max_iterations=15)
    assert info.value.mismatch_norm > 0


def test_misaligned_injections_rejected(two_bus):
    with pytest.raises(ValueError):
        solve_power_flow(two_bus, BusInjections.zeros((2, 1)))


def test_lossless_flows_are_antisymmetric():
    rng = np.random.default_rng(21)
    forward = Branch(1, 2, r=0.0, x=0.12)
    backward = Branch(2, 1, r=0.0, x=0.12)
    for _ in range(50):
        state = SystemState((1, 2), rng.uniform(0.9, 1.1, 2), rng.uniform(-0.5, 0.5, 2))
        p_ij, _ = branch_flow(state, forward)
        p_ji, _ = branch_flow(state, backward)
        assert p_ij == pytest.approx(-p_ji, abs=1e-12)
