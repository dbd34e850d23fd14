"""Pruebas del motor de ataque: sesgo, enmascaramiento, pseudo-residuo y localización."""

from __future__ import annotations

import numpy as np
import pytest

from src.attack import (
    AttackGoal,
    GateConfig,
    StateBias,
    attacker_estimate,
    build_bias,
    craft_attack,
    estimate_attacker_noise,
    regional_residuals,
    select_attack_region,
)
from src.attack.engine import attacker_threshold, gate_passes, pseudo_residual
from src.core.estimation import estimate_state
from src.core.network import subgraph_meters
from src.core.topology import InferredBranch, LearnedModel


@pytest.fixture(scope="module")
def true_model(ieee14_plain):
    return LearnedModel.from_case(ieee14_plain)


@pytest.fixture(scope="module")
def clean(ieee14_plain, snapshot_factory):
    _, snapshots = snapshot_factory(ieee14_plain, 3)
    return snapshots[2]


@pytest.fixture(scope="module")
def noisy(ieee14_plain, snapshot_factory):
    _, snapshots = snapshot_factory(ieee14_plain, 40, noise_fraction=0.01, seed=5)
    return snapshots


def _theta_bias(model, bus_id, value):
    bias = StateBias.zeros(model.bus_ids)
    theta = bias.theta.copy()
    theta[model.bus_ids.index(bus_id)] = value
    return StateBias(model.bus_ids, theta, bias.vm)


def test_bus_one_attack_only_touches_its_meters(true_model, clean):
    bias = _theta_bias(true_model, 1, 0.05)
    attack = craft_attack(true_model, clean, bias, region_mode="biased", targets=[1])
    allowed = {
        "p_flow@1-2", "p_flow@1-5", "q_flow@1-2", "q_flow@1-5", "p_inj@1", "q_inj@1", "v_mag@1",
    }
    assert {clean.layout[m].label for m in attack.rewritten} == allowed
    changed = np.flatnonzero(attack.z_a.z != clean.z)
    assert {clean.layout[m].label for m in changed} <= allowed
    untouched = np.setdiff1d(np.arange(len(clean.z)), sorted(attack.rewritten))
    assert np.array_equal(attack.z_a.z[untouched], clean.z[untouched])


def test_masked_meters_stay_bit_identical_in_neighbourhood_mode(true_model, noisy):
    z = noisy[-1]
    attack = craft_attack(true_model, z, _theta_bias(true_model, 9, -0.02), targets=[9])
    inc = true_model.incidence(z.layout)
    region = subgraph_meters(inc, true_model.neighbours(9) + (9,))
    assert attack.rewritten == region
    outside = [m for m in range(len(z.z)) if m not in region]
    assert np.array_equal(attack.z_a.z[outside], z.z[outside])


def test_zero_bias_without_targets_forwards_snapshot(true_model, noisy):
    z = noisy[0]
    attack = craft_attack(true_model, z, StateBias.zeros(true_model.bus_ids))
    assert attack.rewritten == frozenset()
    assert np.array_equal(attack.z_a.z, z.z)
    assert attack.pseudo_residual == pytest.approx(attack.estimate.weighted_residual, rel=1e-6)


def test_full_graph_attack_has_zero_pseudo_residual(true_model, noisy):
    z = noisy[1]
    bias = _theta_bias(true_model, 4, 0.03)
    attack = craft_attack(true_model, z, bias, region_mode="full", targets=[4])
    assert attack.pseudo_residual == 0.0
    zero = craft_attack(true_model, z, StateBias.zeros(true_model.bus_ids), region_mode="full", targets=[4])
    predicted = true_model.measurement_function(z.layout).evaluate_state(zero.estimate.state)
    np.testing.assert_array_equal(zero.z_a.z, predicted)


def test_masked_pseudo_residual_recomputed(true_model, ieee14_plain, clean):
    bias = _theta_bias(true_model, 1, 0.05)
    attack = craft_attack(true_model, clean, bias, region_mode="biased", targets=[1])
    x_hat = attack.estimate.state
    predicted = true_model.measurement_function(clean.layout).evaluate_state(bias.apply(x_hat))
    expected = np.sqrt(np.sum(((attack.z_a.z - predicted) / clean.sigma) ** 2))
    at_start = pseudo_residual(attack.z_a, true_model, x_hat, bias, refit=False)
    assert at_start == pytest.approx(expected, rel=1e-9)
    assert at_start > 0
    # the refit removes what the operator's estimator would absorb
    operator = estimate_state(attack.z_a, ieee14_plain)
    assert attack.pseudo_residual <= at_start
    assert attack.pseudo_residual == pytest.approx(operator.weighted_residual, rel=1e-4)


def test_zero_bias_with_targets_writes_fitted_values(true_model, noisy):
    z = noisy[2]
    attack = craft_attack(true_model, z, StateBias.zeros(true_model.bus_ids), targets=[9])
    predicted = true_model.measurement_function(z.layout).evaluate_state(attack.estimate.state)
    rows = sorted(attack.rewritten)
    assert rows
    np.testing.assert_array_equal(attack.z_a.z[rows], predicted[rows])


def test_bias_outside_targets_is_rejected(true_model, clean):
    with pytest.raises(ValueError):
        craft_attack(true_model, clean, _theta_bias(true_model, 7, 0.01), targets=[1])


def test_reference_bus_bias_uses_steepest_neighbour(true_model, clean):
    estimate = attacker_estimate(clean, true_model)
    goal = AttackGoal(targets=(1,), magnitude=0.15)
    bias = build_bias(goal, estimate.state, true_model)
    va = estimate.state.va
    diffs = [va[0] - va[true_model.bus_ids.index(j)] for j in (2, 5)]
    assert bias.theta[0] == pytest.approx(0.15 * max(diffs, key=abs))
    assert bias.support == frozenset({1})


def test_absolute_and_magnitude_bias(true_model, clean):
    estimate = attacker_estimate(clean, true_model)
    absolute = build_bias(AttackGoal(targets=(4,), bias_mode="absolute", magnitude=0.02), estimate.state, true_model)
    assert absolute.theta[3] == pytest.approx(0.02)
    magnitude = build_bias(AttackGoal(targets=(4,), quantity="magnitude", magnitude=0.01), estimate.state, true_model)
    assert magnitude.vm[3] == pytest.approx(0.01 * estimate.state.vm[3])
    with pytest.raises(ValueError):
        build_bias(AttackGoal(targets=(99,)), estimate.state, true_model)


def test_regional_residuals(true_model, ieee14_plain, clean, noisy):
    assert regional_residuals(clean, true_model, 1e-6) == frozenset()
    assert regional_residuals(noisy[0], true_model, 0.0) == frozenset(range(len(noisy[0].z)))

    corrupted = true_model.with_branches(
        [InferredBranch(br.from_bus, br.to_bus, br.g, 2 * br.b) if br.pair == frozenset((4, 9)) else br
         for br in true_model.branches]
    )
    flagged = regional_residuals(clean, corrupted, 1e-4)
    branch_meters = {clean.layout.index_of(label) for label in ("p_flow@4-9", "q_flow@4-9")}
    assert flagged & branch_meters


def test_select_attack_region(true_model, ieee14_layout):
    inc = true_model.incidence(ieee14_layout)
    assert select_attack_region(frozenset(), inc, [1, 9]) == frozenset({1, 9})
    assert select_attack_region(range(len(ieee14_layout)), inc, [1, 9]) == frozenset()
    bus9 = [m for m, meter in enumerate(ieee14_layout) if meter.buses == (9,)]
    assert select_attack_region(bus9, inc, [1, 9]) == frozenset({1})


def test_attacker_noise_estimate_is_close(true_model, noisy):
    noise = estimate_attacker_noise(true_model, noisy[:20])
    assert 0.005 < noise.fraction < 0.02
    assert noise.dof == len(noisy[0].z) - (2 * 14 - 1)
    np.testing.assert_array_equal(noise.sigma_for(noisy[0]), noisy[0].sigma)
    prior = estimate_attacker_noise(true_model, noisy[:20], prior=0.02)
    assert not prior.from_metadata
    assert prior.sigma_for(noisy[0]) == pytest.approx(0.02 * np.maximum(np.abs(noisy[0].z), 0.01))


def _scaled_b(model, factor):
    return model.with_branches([InferredBranch(br.from_bus, br.to_bus, br.g, factor * br.b) for br in model.branches])


def test_corrupted_model_fails_the_gate(true_model, noisy):
    corrupted = _scaled_b(true_model, 1.5)
    honest = estimate_attacker_noise(true_model, noisy[:20])
    noise = estimate_attacker_noise(corrupted, noisy[:20])
    assert noise.fraction == honest.fraction
    tau_hat = attacker_threshold(noise)
    goal = AttackGoal(targets=(1,))
    for z in noisy[20:25]:
        estimate = attacker_estimate(z, corrupted, noise)
        bias = build_bias(goal, estimate.state, corrupted)
        attack = craft_attack(corrupted, z, bias, targets=goal.targets, noise=noise, estimate=estimate)
        assert not gate_passes(attack.pseudo_residual, tau_hat, 0.8)


def test_true_model_pseudo_residual_matches_operator(true_model, ieee14_plain, noisy):
    goal = AttackGoal(targets=(1,))
    ratios = []
    for z in noisy[:20]:
        estimate = attacker_estimate(z, true_model)
        bias = build_bias(goal, estimate.state, true_model)
        attack = craft_attack(true_model, z, bias, targets=goal.targets, estimate=estimate)
        operator = estimate_state(attack.z_a, ieee14_plain)
        ratios.append(attack.pseudo_residual / operator.weighted_residual)
    assert np.median(np.abs(np.array(ratios) - 1.0)) < 0.05
    np.testing.assert_allclose(ratios, 1.0, rtol=1e-4)


def test_full_knowledge_attack_stays_under_clean_residual(ieee14, snapshot_factory):
    model = LearnedModel.from_case(ieee14)
    _, snapshots = snapshot_factory(ieee14, 30, noise_fraction=0.01, seed=9)
    goal = AttackGoal(targets=(4,), region_mode="full")
    for z in snapshots:
        clean_r = estimate_state(z, ieee14).weighted_residual
        estimate = attacker_estimate(z, model)
        bias = build_bias(goal, estimate.state, model)
        attack = craft_attack(model, z, bias, region_mode="full", targets=goal.targets, estimate=estimate)
        assert attack.pseudo_residual == 0.0
        assert estimate_state(attack.z_a, ieee14).weighted_residual <= clean_r + 1e-6


def test_gate_boundary_and_config():
    assert gate_passes(0.8, 1.0, 0.8)
    assert not gate_passes(0.81, 1.0, 0.8)
    with pytest.raises(ValueError):
        GateConfig(margin=0.0)
    with pytest.raises(ValueError):
        AttackGoal(targets=())
    with pytest.raises(ValueError):
        AttackGoal(region_mode="ring")
