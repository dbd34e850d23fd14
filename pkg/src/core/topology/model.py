"""The attacker's learned grid model and its text export format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from src.core.measurements import MeasurementFunction
from src.core.network import AdmittanceView, BranchSet, IncidenceMatrix, MeterLayout, build_admittance, build_incidence
from src.core.topology.errors import DisconnectedTopologyError, TopologyLearningError
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

_TABLE_COLUMNS = ["from", "to", "g", "b", "b_sh", "tap", "b_sh_to"]


@dataclass(frozen=True)
class InferredBranch:
    from_bus: int
    to_bus: int
    g: float
    b: float
    b_sh: float = 0.0  # from-end shunt of the π model
    tap: float = 1.0
    b_sh_to: Optional[float] = None  # None means same as b_sh

    @property
    def to_end_shunt(self) -> float:
        return self.b_sh if self.b_sh_to is None else self.b_sh_to

    @property
    def pair(self) -> FrozenSet[int]:
        return frozenset((self.from_bus, self.to_bus))


@dataclass(frozen=True, eq=False)
class LearnedModel:
    """Inferred branches plus fit statistics; backs the estimated measurement function."""

    bus_ids: Tuple[int, ...]
    branches: Tuple[InferredBranch, ...]
    reference_bus: int
    angles: Optional[np.ndarray] = None
    mismatch: float = float("nan")
    iterations: int = 0
    sample_count: int = 0
    notes: Dict[str, str] = field(default_factory=dict)
    bus_shunts: Optional[Tuple[float, ...]] = None  # susceptance per bus, bus_ids order
    mismatch_history: Tuple[float, ...] = ()  # accepted fine-stage mismatches

    def __post_init__(self) -> None:
        object.__setattr__(self, "bus_ids", tuple(int(b) for b in self.bus_ids))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "mismatch_history", tuple(float(m) for m in self.mismatch_history))
        if self.bus_shunts is not None:
            shunts = tuple(float(s) for s in self.bus_shunts)
            if len(shunts) != len(self.bus_ids):
                raise TopologyLearningError("bus_shunts needs one value per bus", stage="input")
            object.__setattr__(self, "bus_shunts", shunts)
        if self.reference_bus not in self.bus_ids:
            raise TopologyLearningError(f"Reference bus {self.reference_bus} not in model", stage="input")
        known = set(self.bus_ids)
        for branch in self.branches:
            if branch.from_bus not in known or branch.to_bus not in known:
                raise TopologyLearningError(f"Branch {branch.from_bus}-{branch.to_bus} outside model buses", "input")
        touched = {bus for branch in self.branches for bus in branch.pair}
        if touched and not nx.is_connected(self.graph().subgraph(touched)):
            raise DisconnectedTopologyError("Inferred branch graph is not connected", stage="fine")

    # -- Topology ------------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.bus_ids)
        graph.add_edges_from((br.from_bus, br.to_bus) for br in self.branches)
        return graph

    def branch_pairs(self) -> Set[FrozenSet[int]]:
        return {branch.pair for branch in self.branches}

    def neighbours(self, bus_id: int) -> Tuple[int, ...]:
        return tuple(sorted(self.graph().neighbors(bus_id)))

    def branch_incidence(self) -> np.ndarray:
        """Signed branch x bus incidence (+1 from end, -1 to end)."""

        column = {bus_id: n for n, bus_id in enumerate(self.bus_ids)}
        matrix = np.zeros((len(self.branches), self.n_bus))
        for k, branch in enumerate(self.branches):
            matrix[k, column[branch.from_bus]] = 1.0
            matrix[k, column[branch.to_bus]] = -1.0
        return matrix

    def branch_set(self) -> BranchSet:
        column = {bus_id: n for n, bus_id in enumerate(self.bus_ids)}
        return BranchSet(
            bus_ids=self.bus_ids,
            from_idx=np.array([column[br.from_bus] for br in self.branches], dtype=int),
            to_idx=np.array([column[br.to_bus] for br in self.branches], dtype=int),
            g=np.array([br.g for br in self.branches], dtype=float),
            b=np.array([br.b for br in self.branches], dtype=float),
            b_sh=np.array([br.b_sh for br in self.branches], dtype=float),
            tap=np.array([br.tap for br in self.branches], dtype=float),
            b_sh_to=np.array([br.to_end_shunt for br in self.branches], dtype=float),
            bus_b_sh=None if self.bus_shunts is None else np.array(self.bus_shunts),
        )

    def admittance(self) -> AdmittanceView:
        return build_admittance(self.branch_set())

    def incidence(self, layout: MeterLayout) -> IncidenceMatrix:
        # flow meters on pairs the model lacks still map to their two buses
        return build_incidence(self, layout, strict=False)

    def measurement_function(self, layout: MeterLayout) -> MeasurementFunction:
        """The estimated measurement function h-hat for ``layout``."""

        return MeasurementFunction(self.branch_set(), layout)

    def with_branches(self, branches: Sequence[InferredBranch], **changes) -> "LearnedModel":
        values = dict(
            bus_ids=self.bus_ids,
            branches=tuple(branches),
            reference_bus=self.reference_bus,
            angles=self.angles,
            mismatch=self.mismatch,
            iterations=self.iterations,
            sample_count=self.sample_count,
            notes=dict(self.notes),
            bus_shunts=self.bus_shunts,
            mismatch_history=self.mismatch_history,
        )
        values.update(changes)
        return LearnedModel(**values)

    @classmethod
    def from_case(cls, case) -> "LearnedModel":
        """Exact model of a known case (full-knowledge baseline)."""

        branches = tuple(
            InferredBranch(br.from_bus, br.to_bus, br.g, br.b, br.b_sh, br.tap) for br in case.branches
        )
        return cls(bus_ids=case.bus_ids, branches=branches, reference_bus=case.slack_bus, mismatch=0.0)


def save_learned_model(model: LearnedModel, path: Path) -> Path:
    """Write ``from to g b b_sh tap b_sh_to`` rows with ``# key = value`` metadata."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "bus_ids": " ".join(str(b) for b in model.bus_ids),
        "reference_bus": str(model.reference_bus),
        "sample_count": str(model.sample_count),
        "iterations": str(model.iterations),
        "mismatch": repr(float(model.mismatch)),
        **{f"note.{key}": value for key, value in model.notes.items()},
    }
    if model.bus_shunts is not None:
        header["bus_shunts"] = " ".join(repr(s) for s in model.bus_shunts)
    lines = ["# gridsnoop learned model"] + [f"# {key} = {value}" for key, value in header.items()]
    lines.append(" ".join(_TABLE_COLUMNS))
    for br in model.branches:
        values = (br.g, br.b, br.b_sh, br.tap, br.to_end_shunt)
        lines.append(" ".join([str(br.from_bus), str(br.to_bus)] + [repr(float(v)) for v in values]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    LOGGER.info("Learned model with %d branches written to %s", len(model.branches), path)
    return path


def load_learned_model(path: Path) -> LearnedModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No se encuentra el modelo aprendido: {path}")
    metadata: Dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#") and "=" in line:
            key, value = line.lstrip("#").split("=", 1)
            metadata[key.strip()] = value.strip()

    table = pd.read_csv(path, sep=r"\s+", comment="#")
    missing = [col for col in ("from", "to", "g", "b") if col not in table.columns]
    if missing or "bus_ids" not in metadata or "reference_bus" not in metadata:
        raise TopologyLearningError(f"Malformed learned model file {path} (missing {missing or 'metadata'})", "input")

    branches = tuple(
        InferredBranch(
            from_bus=int(row["from"]),
            to_bus=int(row["to"]),
            g=float(row["g"]),
            b=float(row["b"]),
            b_sh=float(row.get("b_sh", 0.0)),
            tap=float(row.get("tap", 1.0)),
            b_sh_to=float(row["b_sh_to"]) if "b_sh_to" in table.columns else None,
        )
        for _, row in table.iterrows()
    )
    notes = {key[len("note."):]: value for key, value in metadata.items() if key.startswith("note.")}
    return LearnedModel(
        bus_ids=tuple(int(b) for b in metadata["bus_ids"].split()),
        branches=branches,
        reference_bus=int(metadata["reference_bus"]),
        mismatch=float(metadata.get("mismatch", "nan")),
        iterations=int(metadata.get("iterations", 0)),
        sample_count=int(metadata.get("sample_count", 0)),
        notes=notes,
        bus_shunts=tuple(float(s) for s in metadata["bus_shunts"].split()) if "bus_shunts" in metadata else None,
    )
