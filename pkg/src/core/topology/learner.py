"""Two-stage blind topology learning pipeline (coarse -> prune -> fine -> post-prune)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import networkx as nx
import numpy as np

from src.core.topology.buffer import SampleBuffer
from src.core.topology.coarse import coarse_identify, prune_incidence
from src.core.topology.errors import TopologyLearningError
from src.core.topology.fine import FineConfig, calibrate_end_shunts, fine_identify
from src.core.topology.model import LearnedModel
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)


@dataclass(frozen=True)
class CoarseConfig:
    ridge: Optional[float] = None
    center: bool = False
    threshold_fraction: float = 0.05
    flat_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ValueError("threshold_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class LearnerConfig:
    min_samples: int = 200
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    fine: FineConfig = field(default_factory=FineConfig)
    post_prune_fraction: float = 0.02
    reference_bus: Optional[int] = None
    split_end_shunts: bool = True

    def __post_init__(self) -> None:
        if self.min_samples < 1:
            raise ValueError("min_samples must be positive")
        if not 0.0 <= self.post_prune_fraction < 1.0:
            raise ValueError("post_prune_fraction must lie in [0, 1)")


def _post_prune(model: LearnedModel, buf: SampleBuffer, cfg: LearnerConfig) -> LearnedModel:
    """Drop branches whose |b| collapsed during refinement and refit the rest."""

    if cfg.post_prune_fraction <= 0 or not model.branches:
        return model
    magnitudes = np.array([abs(br.b) for br in model.branches])
    cutoff = cfg.post_prune_fraction * magnitudes.max()
    kept = [br for br, value in zip(model.branches, magnitudes) if value >= cutoff]
    if len(kept) == len(model.branches):
        return model

    graph = nx.Graph()
    graph.add_nodes_from(model.bus_ids)
    graph.add_edges_from((br.from_bus, br.to_bus) for br in kept)
    if not nx.is_connected(graph):
        LOGGER.warning("Post-fine pruning would disconnect the model; keeping %d branches", len(model.branches))
        return model

    dropped = sorted(tuple(sorted(br.pair)) for br in model.branches if br not in kept)
    LOGGER.info("Post-fine pruning dropped %d weak branches: %s", len(dropped), dropped)
    refit = fine_identify(
        kept,
        buf,
        cfg.fine,
        reference_bus=model.reference_bus,
        initial_angles=model.angles,
        initial_shunts=model.bus_shunts,
    )
    return refit.with_branches(refit.branches, iterations=model.iterations + refit.iterations)


def learn_topology(buf: SampleBuffer, cfg: Optional[LearnerConfig] = None) -> LearnedModel:
    """Blind identification of branch connectivity and per-unit g, b from a sample buffer."""

    cfg = cfg or LearnerConfig()
    if buf.n_samples < cfg.min_samples:
        raise TopologyLearningError(
            f"Insufficient data: {buf.n_samples} samples, at least {cfg.min_samples} required", stage="input"
        )

    coarse = coarse_identify(
        buf, cfg.coarse.ridge, center=cfg.coarse.center, flat_fraction=cfg.coarse.flat_fraction
    )
    candidates = prune_incidence(coarse, cfg.coarse.threshold_fraction)
    model = fine_identify(candidates, buf, cfg.fine, reference_bus=cfg.reference_bus)
    model = _post_prune(model, buf, cfg)
    if cfg.split_end_shunts:
        model = calibrate_end_shunts(model, buf)
    LOGGER.info(
        "Learned %d branches from %d samples (mismatch %.4e, Gram cond %.2e)",
        len(model.branches),
        buf.n_samples,
        model.mismatch,
        coarse.condition_number,
    )
    notes = {
        **model.notes,
        "gram_condition": f"{coarse.condition_number:.6e}",
        "candidates": str(len(candidates)),
    }
    return model.with_branches(model.branches, notes=notes)


def learn_region(buf: SampleBuffer, buses: Iterable[int], cfg: Optional[LearnerConfig] = None) -> LearnedModel:
    """Learn a sub-network; injections at boundary buses are taken as local loads."""

    region = buf.subset(buses)
    if region.n_bus < 2:
        raise TopologyLearningError("A region needs at least two buses", stage="input")
    return learn_topology(region, cfg)
