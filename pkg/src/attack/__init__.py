"""Attacker logic; sees only intercepted snapshots and its own learned model."""
from .campaign import (
    CAMPAIGN_COLUMNS,
    INSUFFICIENT_DATA,
    AttackCampaign,
    CampaignResult,
    CampaignStep,
    attack_loop,
    summarize_gates,
)
from .engine import (
    AttackAborted,
    AttackerNoiseModel,
    AttackGoal,
    AttackVector,
    GateConfig,
    StateBias,
    attacker_estimate,
    attacker_threshold,
    build_bias,
    craft_attack,
    estimate_attacker_noise,
    pseudo_residual,
    regional_residuals,
    select_attack_region,
)
