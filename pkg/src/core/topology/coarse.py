"""Coarse stage: closed-form regression of nodal G#, B# and incidence pruning.

Approximating ``P_i / V_i ≈ Σ_j G_ij V_j`` and ``Q_i / V_i ≈ -Σ_j B_ij V_j``
over T snapshots gives the ridge regressions

    G# =  [P/V][V]^T ([V][V]^T + λI)^-1
    B# = -[Q/V][V]^T ([V][V]^T + λI)^-1

Entries of B# that survive a relative threshold become the candidate
branches handed to the fine stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy import linalg

from src.core.network import AdmittanceView
from src.core.topology.buffer import SampleBuffer
from src.core.topology.errors import DisconnectedTopologyError, SingularGramError
from src.core.topology.model import InferredBranch
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

DEFAULT_RIDGE_SCALE = 1e-6
_SINGULAR_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class CoarseEstimate:
    bus_ids: Tuple[int, ...]
    G: np.ndarray
    B: np.ndarray
    condition_number: float
    # Buses whose voltage barely moves; their mutual couplings are not identifiable.
    fixed_voltage_buses: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        n_bus = len(self.bus_ids)
        if self.G.shape != (n_bus, n_bus) or self.B.shape != (n_bus, n_bus):
            raise ValueError("Coarse matrices must be (bus count x bus count)")
        if not (np.all(np.isfinite(self.G)) and np.all(np.isfinite(self.B))):
            raise ValueError("Coarse matrices contain non-finite entries")

    @classmethod
    def from_admittance(cls, bus_ids, admittance: AdmittanceView) -> "CoarseEstimate":
        """Noise-free coarse estimate equal to a known nodal admittance."""

        return cls(tuple(bus_ids), admittance.G.copy(), admittance.B.copy(), condition_number=1.0)


def coarse_identify(
    buf: SampleBuffer,
    ridge: Optional[float] = None,
    *,
    center: bool = False,
    flat_fraction: float = 0.1,
) -> CoarseEstimate:
    """Ridge regression of [P/V] and [Q/V] on [V].

    ``ridge=None`` uses ``1e-6 × trace(Gram)``. ``center`` subtracts the
    per-bus mean from regressors and responses first.
    """

    if ridge is not None and ridge < 0:
        raise ValueError("ridge must be non-negative")
    x = buf.v
    y_p = buf.p / buf.v
    y_q = buf.q / buf.v
    if center:
        x = x - x.mean(axis=1, keepdims=True)
        y_p = y_p - y_p.mean(axis=1, keepdims=True)
        y_q = y_q - y_q.mean(axis=1, keepdims=True)

    gram = x @ x.T
    if ridge is None:
        ridge = DEFAULT_RIDGE_SCALE * float(np.trace(gram))
    regularized = gram + ridge * np.eye(buf.n_bus)
    condition = float(np.linalg.cond(regularized))
    if ridge == 0 and (buf.n_samples < buf.n_bus or not np.isfinite(condition) or condition > _SINGULAR_CONDITION):
        raise SingularGramError(
            f"Gram matrix is singular (T={buf.n_samples}, buses={buf.n_bus}, cond={condition:.2e}); "
            "collect more samples or use ridge > 0"
        )

    try:
        coefficients = linalg.solve(regularized, np.hstack([x @ y_p.T, x @ y_q.T]), assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SingularGramError(f"Gram matrix could not be factorized: {exc}") from exc
    n_bus = buf.n_bus
    g_hash = coefficients[:, :n_bus].T
    b_hash = -coefficients[:, n_bus:].T

    spread = buf.v.std(axis=1) / buf.v.mean(axis=1)
    reference = float(np.median(spread))
    fixed = tuple(
        bus_id for bus_id, value in zip(buf.bus_ids, spread) if reference > 0 and value < flat_fraction * reference
    )
    LOGGER.debug("Coarse regression: T=%d ridge=%.3e cond=%.3e fixed-V buses=%s", buf.n_samples, ridge, condition, fixed)
    return CoarseEstimate(buf.bus_ids, g_hash, b_hash, condition, fixed)


def prune_incidence(coarse: CoarseEstimate, threshold_fraction: float) -> Tuple[InferredBranch, ...]:
    """Keep pairs with |B#_ij| ≥ fraction × max off-diagonal |B#| (symmetrized).

    Pairs among fixed-voltage buses are kept as candidates regardless, with a
    weak initial susceptance.
    """

    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    n_bus = len(coarse.bus_ids)
    g_sym = 0.5 * (coarse.G + coarse.G.T)
    b_sym = 0.5 * (coarse.B + coarse.B.T)
    off = ~np.eye(n_bus, dtype=bool)
    magnitude = np.abs(b_sym) * off
    peak = float(magnitude.max(initial=0.0))
    cutoff = threshold_fraction * peak

    branches: List[InferredBranch] = []
    kept_b: List[float] = []
    for i, j in combinations(range(n_bus), 2):
        if peak > 0 and magnitude[i, j] >= cutoff:
            branches.append(InferredBranch(coarse.bus_ids[i], coarse.bus_ids[j], g=-g_sym[i, j], b=-b_sym[i, j]))
            kept_b.append(abs(b_sym[i, j]))

    fixed = set(coarse.fixed_voltage_buses)
    if len(fixed) > 1:
        existing = {br.pair for br in branches}
        seed_b = -0.5 * float(np.median(kept_b)) if kept_b else -1.0
        for i, j in combinations(range(n_bus), 2):
            pair = frozenset((coarse.bus_ids[i], coarse.bus_ids[j]))
            if pair <= fixed and pair not in existing:
                branches.append(InferredBranch(coarse.bus_ids[i], coarse.bus_ids[j], g=0.0, b=seed_b))

    graph = nx.Graph()
    graph.add_nodes_from(coarse.bus_ids)
    graph.add_edges_from((br.from_bus, br.to_bus) for br in branches)
    if not nx.is_connected(graph):
        islands = [sorted(c) for c in nx.connected_components(graph)]
        raise DisconnectedTopologyError(
            f"Pruning at {threshold_fraction:.3g} leaves {len(islands)} islands {islands}; lower the threshold"
        )
    LOGGER.debug("Pruning kept %d candidate branches (cutoff %.4g)", len(branches), cutoff)
    return tuple(branches)
