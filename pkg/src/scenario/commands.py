"""Batch commands behind the CLI: simulate, learn and campaign.

Every per-seed job is a top-level function so it can be shipped to a
``ProcessPoolExecutor``; results are merged in seed order, which keeps the
written CSVs a pure function of ``(config, seeds)``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from src.attack import (
    AttackAborted,
    CAMPAIGN_COLUMNS,
    AttackCampaign,
    CampaignResult,
    attacker_estimate,
    build_bias,
    craft_attack,
    estimate_attacker_noise,
)
from src.core.case_reader import load_case
from src.core.estimation import estimate_log_frame
from src.core.measurements import stream_frame
from src.core.topology import SampleBuffer, TopologyLearningError, learn_topology
from src.scenario.config import ScenarioConfig
from src.scenario.simulation import measurements_of, operator_for, simulate_stream, snapshots_needed
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

LEARN_COLUMNS = ["T", "seed", "r_p", "alarm", "under_alarm", "operator_r", "error"]
SUMMARY_COLUMNS = [
    "seed",
    "attempts",
    "launched",
    "gated_detection_rate",
    "ungated_detection_rate",
    "clean_alarm_rate",
    "first_attack_time",
    "diagnosis",
]

_R = TypeVar("_R")


def run_seeds(job: Callable[[ScenarioConfig, int], _R], cfg: ScenarioConfig) -> List[_R]:
    """Fan ``job`` out over the configured seeds; results come back in seed order."""

    seeds = list(cfg.seeds)
    workers = min(cfg.workers, len(seeds))
    if workers <= 1:
        return [job(cfg, seed) for seed in seeds]
    LOGGER.info("Running %d seeds on %d worker processes", len(seeds), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, repeat(cfg), seeds))


def _write(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


# -- simulate ------------------------------------------------------------------------
def simulate_seed(cfg: ScenarioConfig, seed: int) -> Tuple[int, pd.DataFrame, pd.DataFrame]:
    case = load_case(cfg.case)
    snapshots = list(simulate_stream(case, cfg, seed))
    operator = operator_for(case, cfg, snapshots)
    records = [operator.observe(snap.measurements) for snap in snapshots]
    alarms = sum(record.alarm for record in records)
    LOGGER.info("seed %d: %d snapshots, %d clean alarms (tau=%.4f)", seed, len(snapshots), alarms, operator.tau)
    return seed, stream_frame(measurements_of(snapshots)), estimate_log_frame(records)


def cmd_simulate(cfg: ScenarioConfig) -> List[Path]:
    """Per seed: ``stream_seed{N}.csv`` and ``estimates_seed{N}.csv``."""

    written: List[Path] = []
    for seed, stream, estimates in run_seeds(simulate_seed, cfg):
        written.append(_write(stream, cfg.out_dir / f"stream_seed{seed}.csv"))
        written.append(_write(estimates, cfg.out_dir / f"estimates_seed{seed}.csv"))
    return written


# -- learn ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LearnJob:
    """Picklable binding of the sweep's sample counts to a seed job."""

    sample_counts: Tuple[int, ...]

    def __call__(self, cfg: ScenarioConfig, seed: int) -> List[Dict[str, object]]:
        return learn_seed(cfg, seed, self.sample_counts)


def learn_seed(cfg: ScenarioConfig, seed: int, sample_counts: Sequence[int]) -> List[Dict[str, object]]:
    """Train on the first T snapshots and score a reference attack on snapshot T."""

    case = load_case(cfg.case)
    length = snapshots_needed(cfg, max(sample_counts) + 1)
    snapshots = list(simulate_stream(case, cfg, seed, length=length))
    operator = operator_for(case, cfg, snapshots)
    goal = cfg.goal()
    learner_cfg = cfg.learner_config(min_samples=1)

    rows: List[Dict[str, object]] = []
    for count in sample_counts:
        row: Dict[str, object] = {
            "T": count,
            "seed": seed,
            "r_p": np.nan,
            "alarm": operator.tau,
            "under_alarm": False,
            "operator_r": np.nan,
            "error": "",
        }
        try:
            buf = SampleBuffer.from_measurements(measurements_of(snapshots[:count]))
            model = learn_topology(buf, learner_cfg)
            window = measurements_of(snapshots[max(0, count - cfg.calibration_window) : count])
            noise = estimate_attacker_noise(model, window, prior=cfg.noise_prior)
            z = snapshots[count].measurements
            estimate = attacker_estimate(z, model, noise)
            bias = build_bias(goal, estimate.state, model)
            attack = craft_attack(
                model, z, bias, region_mode=goal.region_mode, targets=goal.targets, noise=noise, estimate=estimate
            )
        except TopologyLearningError as exc:
            row["error"] = str(exc)
        except (AttackAborted, ValueError) as exc:
            row["error"] = f"attack: {exc}"
        else:
            row["r_p"] = attack.pseudo_residual
            row["under_alarm"] = bool(attack.pseudo_residual < operator.tau)
            row["operator_r"] = operator.observe(attack.z_a).r
        if row["error"]:
            LOGGER.warning("seed %d, T=%d: %s", seed, count, row["error"])
        rows.append(row)
    LOGGER.info("seed %d: learning sweep over %s done", seed, list(sample_counts))
    return rows


def cmd_learn(cfg: ScenarioConfig, sample_counts: Optional[Sequence[int]] = None) -> Path:
    """Sample-count sweep; one ``learn.csv`` row per (T, seed)."""

    counts = tuple(int(c) for c in (sample_counts or cfg.sample_counts))
    if not counts or min(counts) < 1:
        raise ValueError("sample_counts must contain positive integers")
    rows = [row for seed_rows in run_seeds(LearnJob(counts), cfg) for row in seed_rows]
    return _write(pd.DataFrame(rows, columns=LEARN_COLUMNS), cfg.out_dir / "learn.csv")


# -- campaign ------------------------------------------------------------------------
def _rate(flags: Sequence[bool]) -> float:
    return float(np.mean(flags)) if len(flags) else float("nan")


def campaign_seed(cfg: ScenarioConfig, seed: int) -> Tuple[int, pd.DataFrame, Dict[str, object]]:
    """Attacker in the loop against the live operator for one seed."""

    case = load_case(cfg.case)
    snapshots = list(simulate_stream(case, cfg, seed))
    operator = operator_for(case, cfg, snapshots)
    campaign = AttackCampaign(cfg.goal(), cfg.gate_config(), learner_cfg=cfg.learner_config())
    result = CampaignResult()

    records = []
    gated_alarms: List[bool] = []
    ungated_alarms: List[bool] = []
    clean_alarms: List[bool] = []
    for snap in snapshots:
        step = campaign.step(snap.measurements)
        result.steps.append(step)
        observed = operator.observe(step.output)
        records.append(step.as_record(observed.r, observed.alarm))
        if step.launched:
            gated_alarms.append(observed.alarm)
            ungated_alarms.append(observed.alarm)
        else:
            clean_alarms.append(observed.alarm)
            if step.attack is not None:
                # what the operator would have seen had the attacker ignored the gate
                ungated_alarms.append(operator.observe(step.attack.z_a).alarm)
    result.diagnosis = campaign.diagnosis(result)

    summary = {
        "seed": seed,
        "attempts": len(ungated_alarms),
        "launched": result.launched,
        "gated_detection_rate": _rate(gated_alarms),
        "ungated_detection_rate": _rate(ungated_alarms),
        "clean_alarm_rate": _rate(clean_alarms),
        "first_attack_time": result.first_attack_time if result.first_attack_time is not None else np.nan,
        "diagnosis": result.diagnosis,
    }
    LOGGER.info(
        "seed %d: %d/%d launched, detection gated %.3f ungated %.3f (%s)",
        seed,
        result.launched,
        len(ungated_alarms),
        summary["gated_detection_rate"],
        summary["ungated_detection_rate"],
        result.diagnosis,
    )
    frame = pd.DataFrame(records, columns=CAMPAIGN_COLUMNS)
    return seed, frame, summary


def cmd_campaign(cfg: ScenarioConfig) -> List[Path]:
    """Per seed ``campaign_seed{N}.csv`` plus ``summary.csv``."""

    written: List[Path] = []
    summaries = []
    for seed, frame, summary in run_seeds(campaign_seed, cfg):
        written.append(_write(frame, cfg.out_dir / f"campaign_seed{seed}.csv"))
        summaries.append(summary)
    written.append(_write(pd.DataFrame(summaries, columns=SUMMARY_COLUMNS), cfg.out_dir / "summary.csv"))
    return written
