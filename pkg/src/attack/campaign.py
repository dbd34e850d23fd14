"""Attack campaign state machine: collect -> learn -> craft -> gate -> attack | wait & relearn."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from src.attack.engine import (
    AttackAborted,
    AttackerNoiseModel,
    AttackGoal,
    AttackVector,
    GateConfig,
    attacker_estimate,
    attacker_threshold,
    build_bias,
    craft_attack,
    estimate_attacker_noise,
    gate_passes,
    regional_residuals,
    select_attack_region,
)
from src.core.measurements import MeasurementSet
from src.core.topology import LearnedModel, LearnerConfig, SampleBuffer, TopologyLearningError, learn_topology
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

PHASES = ("collect", "learn", "wait", "attack")
CAMPAIGN_COLUMNS = [
    "t",
    "phase",
    "samples_seen",
    "r_p",
    "tau_hat",
    "gate",
    "launched",
    "operator_r",
    "operator_alarm",
]
INSUFFICIENT_DATA = "insufficient data"


@dataclass(frozen=True, eq=False)
class CampaignStep:
    t: float
    phase: str
    samples_seen: int
    output: MeasurementSet
    r_p: float = float("nan")
    tau_hat: float = float("nan")
    gate: Optional[bool] = None
    launched: bool = False
    attack: Optional[AttackVector] = None
    note: str = ""

    def as_record(self, operator_r: float = float("nan"), operator_alarm: Optional[bool] = None) -> Dict[str, object]:
        return {
            "t": self.t,
            "phase": self.phase,
            "samples_seen": self.samples_seen,
            "r_p": self.r_p,
            "tau_hat": self.tau_hat,
            "gate": "" if self.gate is None else bool(self.gate),
            "launched": self.launched,
            "operator_r": operator_r,
            "operator_alarm": "" if operator_alarm is None else bool(operator_alarm),
        }


@dataclass
class CampaignResult:
    steps: List[CampaignStep] = field(default_factory=list)
    diagnosis: str = ""

    @property
    def launched(self) -> int:
        return sum(1 for step in self.steps if step.launched)

    @property
    def first_attack_time(self) -> Optional[float]:
        return next((step.t for step in self.steps if step.launched), None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([step.as_record() for step in self.steps], columns=CAMPAIGN_COLUMNS)


class AttackCampaign:
    """Sequential attacker fed one intercepted snapshot at a time.

    ``step`` returns what is forwarded to the operator: the original
    snapshot, or the crafted one when the gate passes.
    """

    def __init__(
        self,
        goal: AttackGoal,
        cfg: Optional[GateConfig] = None,
        learner_cfg: Optional[LearnerConfig] = None,
        model: Optional[LearnedModel] = None,
    ) -> None:
        self.goal = goal
        self.cfg = cfg or GateConfig()
        self.learner_cfg = learner_cfg or LearnerConfig(min_samples=self.cfg.min_samples)
        self.model = model
        self.noise: Optional[AttackerNoiseModel] = None
        self.history: List[MeasurementSet] = []
        self.last_error = ""
        self._relearn_at: Optional[int] = None
        self._fixed_model = model is not None

    @property
    def samples_seen(self) -> int:
        return len(self.history)

    def _calibrate(self) -> None:
        window = self.history[-self.cfg.calibration_window :]
        self.noise = estimate_attacker_noise(self.model, window, prior=self.cfg.noise_prior)

    def _learn(self) -> None:
        buf = SampleBuffer.from_measurements(self.history)
        self.model = learn_topology(buf, self.learner_cfg)
        self._calibrate()

    def _tau_hat(self) -> float:
        return self.cfg.tau_hat if self.cfg.tau_hat is not None else attacker_threshold(self.noise, self.cfg.confidence)

    def step(self, z: MeasurementSet) -> CampaignStep:
        self.history.append(z)
        seen = self.samples_seen

        due = self._relearn_at is not None and seen >= self._relearn_at
        if self.model is None or (due and not self._fixed_model):
            if seen < self.cfg.min_samples or (self._relearn_at is not None and not due):
                return CampaignStep(t=z.t, phase="collect", samples_seen=seen, output=z)
            try:
                self._learn()
            except (TopologyLearningError, AttackAborted) as exc:
                self.last_error = str(exc)
                self._relearn_at = seen + self.cfg.relearn_every
                LOGGER.warning("t=%s: topology learning failed (%s); retry at %d samples", z.t, exc, self._relearn_at)
                return CampaignStep(t=z.t, phase="learn", samples_seen=seen, output=z, note=str(exc))
            self._relearn_at = None
            LOGGER.info("t=%s: learned %d branches from %d samples", z.t, len(self.model.branches), seen)
            return CampaignStep(t=z.t, phase="learn", samples_seen=seen, output=z)

        if self.noise is None:
            if seen < self.cfg.calibration_window:
                return CampaignStep(t=z.t, phase="collect", samples_seen=seen, output=z)
            try:
                self._calibrate()
            except AttackAborted as exc:
                self.last_error = str(exc)
                return CampaignStep(t=z.t, phase="wait", samples_seen=seen, output=z, note=str(exc))

        return self._attempt(z)

    def _attempt(self, z: MeasurementSet) -> CampaignStep:
        seen = self.samples_seen
        tau_hat = self._tau_hat()
        try:
            estimate = attacker_estimate(z, self.model, self.noise)
            targets = frozenset(self.goal.targets)
            if self.cfg.localize:
                tau_m = self.noise.per_meter_threshold(z, self.cfg.per_meter_factor)
                flagged = regional_residuals(z, self.model, tau_m, estimate=estimate)
                expand = self.model if self.goal.region_mode == "neighbourhood" else None
                targets = select_attack_region(flagged, self.model.incidence(z.layout), targets, model=expand)
            if not targets:
                self._schedule_relearn(seen)
                return CampaignStep(t=z.t, phase="wait", samples_seen=seen, output=z, tau_hat=tau_hat, note="no feasible region")
            bias = build_bias(self.goal, estimate.state, self.model, targets=targets)
            attack = craft_attack(
                self.model, z, bias, region_mode=self.goal.region_mode, targets=targets, noise=self.noise, estimate=estimate
            )
        except AttackAborted as exc:
            self.last_error = str(exc)
            self._schedule_relearn(seen)
            return CampaignStep(t=z.t, phase="wait", samples_seen=seen, output=z, tau_hat=tau_hat, note=str(exc))

        verdict = gate_passes(attack.pseudo_residual, tau_hat, self.cfg.margin)
        attack = attack.gated(verdict)
        launched = verdict or not self.cfg.enabled
        LOGGER.info(
            "t=%s gate %s: r_p=%.4g vs %.4g (margin %.2f)%s",
            z.t,
            "pass" if verdict else "fail",
            attack.pseudo_residual,
            tau_hat,
            self.cfg.margin,
            "" if self.cfg.enabled else " [gating disabled]",
        )
        if not verdict:
            self._schedule_relearn(seen)
        return CampaignStep(
            t=z.t,
            phase="attack" if launched else "wait",
            samples_seen=seen,
            output=attack.z_a if launched else z,
            r_p=attack.pseudo_residual,
            tau_hat=tau_hat,
            gate=verdict,
            launched=launched,
            attack=attack,
        )

    def _schedule_relearn(self, seen: int) -> None:
        if self._relearn_at is None and not self._fixed_model:
            self._relearn_at = seen + self.cfg.relearn_every

    def diagnosis(self, result: CampaignResult) -> str:
        if result.launched:
            return f"{result.launched} attacks launched"
        if self.samples_seen < self.cfg.min_samples and not self._fixed_model:
            return INSUFFICIENT_DATA
        if self.model is None:
            return f"topology learning failed: {self.last_error}"
        return "gate never passed"


def attack_loop(
    stream: Iterable[MeasurementSet],
    goal: AttackGoal,
    cfg: Optional[GateConfig] = None,
    *,
    learner_cfg: Optional[LearnerConfig] = None,
    model: Optional[LearnedModel] = None,
) -> CampaignResult:
    """Run a campaign over a finite stream (operator columns left empty)."""

    campaign = AttackCampaign(goal, cfg, learner_cfg=learner_cfg, model=model)
    result = CampaignResult()
    for snapshot in stream:
        result.steps.append(campaign.step(snapshot))
    result.diagnosis = campaign.diagnosis(result)
    LOGGER.info("Campaign finished: %s", result.diagnosis)
    return result


def summarize_gates(result: CampaignResult) -> Dict[str, float]:
    gates = [step.gate for step in result.steps if step.gate is not None]
    return {
        "attempts": float(len(gates)),
        "passed": float(sum(gates)),
        "pass_rate": float(np.mean(gates)) if gates else float("nan"),
    }
