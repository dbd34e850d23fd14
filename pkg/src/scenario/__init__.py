"""Experiment harness: scenario configuration, ground-truth simulation and CLI commands."""
from .cli import main
from .commands import cmd_campaign, cmd_learn, cmd_simulate
from .config import ScenarioConfig, ScenarioValidationError, load_scenario
from .simulation import OperatorMonitor, Snapshot, simulate_stream
