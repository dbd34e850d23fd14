"""Test configuration for path setup and shared grid fixtures."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.core.case_reader import load_case  # noqa: E402
from src.core.network import default_layout  # noqa: E402


@pytest.fixture(scope="session")
def ieee14():
    return load_case("cases/ieee14.case")


@pytest.fixture(scope="session")
def ieee14_plain(ieee14):
    """IEEE 14 without line charging or taps (the learner's branch model)."""

    return ieee14.without_shunts_and_taps()


@pytest.fixture(scope="session")
def two_bus():
    return load_case("cases/two_bus.case")


@pytest.fixture(scope="session")
def ieee14_layout(ieee14):
    return default_layout(ieee14)


def simulate_snapshots(case, count, *, noise_fraction=0.0, seed=1, fluctuation=0.1):
    """Noisy (or exact) meter snapshots of ``case`` under a daily load profile."""

    from src.core.load_profile import LoadProfileConfig, generate_loads
    from src.core.measurements import measure
    from src.core.powerflow import solve_power_flow

    layout = default_layout(case)
    profile = LoadProfileConfig.from_case(case, fluctuation=fluctuation, seed=seed)
    states, snapshots = [], []
    for t in profile.sample_times(count):
        state = solve_power_flow(case, generate_loads(profile, t))
        states.append(state)
        snapshots.append(measure(case, state, layout, noise_fraction, seed, t))
    return states, snapshots


@pytest.fixture(scope="session")
def plain_stream(ieee14_plain):
    """720 exact snapshots of the shunt- and tap-free IEEE 14 case."""

    return simulate_snapshots(ieee14_plain, 720)


@pytest.fixture(scope="session")
def snapshot_factory():
    return simulate_snapshots


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs on the bundled 14-bus case")


@pytest.fixture(scope="session")
def bundled_stream(ieee14):
    """720 exact snapshots of the bundled IEEE 14 case (line charging and taps included)."""

    return simulate_snapshots(ieee14, 720)
