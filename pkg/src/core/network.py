"""Grid description types: buses, branches, admittance and meter incidence.

All types are immutable after construction and can be shared read-only
across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, Iterator, Optional, Protocol, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

BUS_TYPES: Tuple[str, ...] = ("slack", "PV", "PQ")
METER_KINDS: Tuple[str, ...] = ("p_flow", "q_flow", "p_inj", "q_inj", "v_mag")
FLOW_KINDS = frozenset({"p_flow", "q_flow"})


class CaseValidationError(ValueError):
    """Se lanza cuando un caso de red viola un invariante (nombra el elemento)."""


class LayoutError(ValueError):
    """Raised when a meter layout references unknown buses or branches."""


class UnknownBusError(ValueError):
    """Raised when a sub-graph query names a bus that is not in the incidence."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    v_set: float = 1.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0  # per-end shunt susceptance (half line charging)
    tap: float = 1.0

    @property
    def _z2(self) -> float:
        return self.r * self.r + self.x * self.x

    @property
    def g(self) -> float:
        return self.r / self._z2

    @property
    def b(self) -> float:
        return -self.x / self._z2

    @property
    def pair(self) -> FrozenSet[int]:
        return frozenset((self.from_bus, self.to_bus))


@dataclass(frozen=True, eq=False)
class BranchSet:
    """Array view of a branch list, indexed by bus position.

    Shared by the true case and by learned models so both drive the same
    admittance assembly and measurement function.
    """

    bus_ids: Tuple[int, ...]
    from_idx: np.ndarray
    to_idx: np.ndarray
    g: np.ndarray
    b: np.ndarray
    b_sh: np.ndarray
    tap: np.ndarray
    b_sh_to: Optional[np.ndarray] = None  # defaults to b_sh (symmetric π)
    bus_b_sh: Optional[np.ndarray] = None  # extra shunt susceptance per bus

    @property
    def to_end_shunt(self) -> np.ndarray:
        return self.b_sh if self.b_sh_to is None else self.b_sh_to

    @property
    def bus_shunt(self) -> np.ndarray:
        return np.zeros(self.n_bus) if self.bus_b_sh is None else self.bus_b_sh

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_branch(self) -> int:
        return int(self.from_idx.size)

    def pair_lookup(self) -> Dict[Tuple[int, int], Tuple[int, bool]]:
        """Map (i, j) position pairs to (branch index, measured at from-end)."""

        lookup: Dict[Tuple[int, int], Tuple[int, bool]] = {}
        for k, (f, t) in enumerate(zip(self.from_idx.tolist(), self.to_idx.tolist())):
            lookup.setdefault((f, t), (k, True))
            lookup.setdefault((t, f), (k, False))
        return lookup


class TopologySource(Protocol):
    """Anything that exposes bus ids and branch endpoints (true case or learned model)."""

    @property
    def bus_ids(self) -> Tuple[int, ...]: ...

    def branch_pairs(self) -> Set[FrozenSet[int]]: ...


@dataclass(frozen=True)
class NetworkCase:
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    mva_base: float = 100.0
    name: str = "case"
    slack_bus: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "slack_bus", self._validate())

    def _validate(self) -> int:
        seen: Set[int] = set()
        for bus in self.buses:
            if bus.id in seen:
                raise CaseValidationError(f"Bus {bus.id} duplicado")
            if bus.type not in BUS_TYPES:
                raise CaseValidationError(f"Bus {bus.id}: tipo desconocido '{bus.type}'")
            if bus.v_set <= 0:
                raise CaseValidationError(f"Bus {bus.id}: voltage setpoint must be positive")
            seen.add(bus.id)

        slack = [bus.id for bus in self.buses if bus.type == "slack"]
        if len(slack) != 1:
            raise CaseValidationError(f"Exactly one slack bus required, found {len(slack)}: {slack}")

        for position, branch in enumerate(self.branches, start=1):
            label = f"Branch #{position} ({branch.from_bus}-{branch.to_bus})"
            for endpoint in (branch.from_bus, branch.to_bus):
                if endpoint not in seen:
                    raise CaseValidationError(f"{label} references unknown bus {endpoint}")
            if branch.from_bus == branch.to_bus:
                raise CaseValidationError(f"{label} is a self-loop")
            if branch._z2 <= 0:
                raise CaseValidationError(f"{label} has zero series impedance")
            if branch.g < 0:
                raise CaseValidationError(f"{label} has negative conductance (r < 0)")
            if branch.tap <= 0:
                raise CaseValidationError(f"{label} has non-positive tap ratio")

        graph = self.graph()
        if graph.number_of_nodes() > 1 and not nx.is_connected(graph):
            islands = sorted(sorted(component) for component in nx.connected_components(graph))
            raise CaseValidationError(f"Branch graph is not connected; islands: {islands}")
        return slack[0]

    # -- Queries -------------------------------------------------------------
    @property
    def bus_ids(self) -> Tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> Dict[int, int]:
        return {bus.id: position for position, bus in enumerate(self.buses)}

    @property
    def slack_index(self) -> int:
        return self.bus_index[self.slack_bus]

    @property
    def reference_bus(self) -> int:
        return self.slack_bus

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(bus.id for bus in self.buses)
        graph.add_edges_from((branch.from_bus, branch.to_bus) for branch in self.branches)
        return graph

    def branch_pairs(self) -> Set[FrozenSet[int]]:
        return {branch.pair for branch in self.branches}

    def find_branch(self, bus_a: int, bus_b: int) -> Optional[Branch]:
        for branch in self.branches:
            if branch.pair == frozenset((bus_a, bus_b)):
                return branch
        return None

    def branch_set(self) -> BranchSet:
        index = self.bus_index
        return BranchSet(
            bus_ids=self.bus_ids,
            from_idx=np.array([index[br.from_bus] for br in self.branches], dtype=int),
            to_idx=np.array([index[br.to_bus] for br in self.branches], dtype=int),
            g=np.array([br.g for br in self.branches], dtype=float),
            b=np.array([br.b for br in self.branches], dtype=float),
            b_sh=np.array([br.b_sh for br in self.branches], dtype=float),
            tap=np.array([br.tap for br in self.branches], dtype=float),
        )

    def without_shunts_and_taps(self) -> "NetworkCase":
        """Copy with line charging removed and unit taps (the learner's branch model)."""

        branches = tuple(replace(br, b_sh=0.0, tap=1.0) for br in self.branches)
        return NetworkCase(buses=self.buses, branches=branches, mva_base=self.mva_base, name=f"{self.name}-plain")


@dataclass(frozen=True, eq=False)
class AdmittanceView:
    """Nodal conductance/susceptance plus the complex matrices used by the solvers."""

    G: np.ndarray
    B: np.ndarray
    ybus: np.ndarray
    yf: np.ndarray
    yt: np.ndarray
    cf: np.ndarray
    ct: np.ndarray


def _as_branch_set(source) -> BranchSet:
    if isinstance(source, BranchSet):
        return source
    return source.branch_set()


def build_admittance(source) -> AdmittanceView:
    """Assemble Ybus with from-side taps, per-end line shunts (MATPOWER rules) and bus shunts."""

    branches = _as_branch_set(source)
    n_bus, n_branch = branches.n_bus, branches.n_branch
    ys = branches.g + 1j * branches.b
    ytt = ys + 1j * branches.to_end_shunt
    yff = (ys + 1j * branches.b_sh) / (branches.tap * branches.tap)
    yft = -ys / branches.tap
    ytf = -ys / branches.tap

    cf = np.zeros((n_branch, n_bus))
    ct = np.zeros((n_branch, n_bus))
    rows = np.arange(n_branch)
    cf[rows, branches.from_idx] = 1.0
    ct[rows, branches.to_idx] = 1.0

    yf = yff[:, None] * cf + yft[:, None] * ct
    yt = ytf[:, None] * cf + ytt[:, None] * ct
    ybus = cf.T @ yf + ct.T @ yt + np.diag(1j * branches.bus_shunt)
    return AdmittanceView(G=ybus.real.copy(), B=ybus.imag.copy(), ybus=ybus, yf=yf, yt=yt, cf=cf, ct=ct)


# -- Meters ------------------------------------------------------------------
@dataclass(frozen=True)
class Meter:
    kind: str
    bus: int
    to_bus: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in METER_KINDS:
            raise LayoutError(f"Unknown meter kind '{self.kind}'")
        if self.is_flow and self.to_bus is None:
            raise LayoutError(f"Flow meter at bus {self.bus} needs a far-end bus")
        if not self.is_flow and self.to_bus is not None:
            raise LayoutError(f"Bus meter '{self.kind}' at bus {self.bus} cannot name a far-end bus")

    @property
    def is_flow(self) -> bool:
        return self.kind in FLOW_KINDS

    @property
    def buses(self) -> Tuple[int, ...]:
        return (self.bus, self.to_bus) if self.is_flow else (self.bus,)  # type: ignore[return-value]

    @property
    def label(self) -> str:
        if self.is_flow:
            return f"{self.kind}@{self.bus}-{self.to_bus}"
        return f"{self.kind}@{self.bus}"

    @classmethod
    def from_label(cls, label: str) -> "Meter":
        try:
            kind, location = label.strip().split("@", 1)
            if "-" in location:
                first, second = location.split("-", 1)
                return cls(kind=kind, bus=int(first), to_bus=int(second))
            return cls(kind=kind, bus=int(location))
        except (ValueError, TypeError) as exc:
            if isinstance(exc, LayoutError):
                raise
            raise LayoutError(f"Malformed meter label '{label}'") from exc


@dataclass(frozen=True)
class MeterLayout:
    meters: Tuple[Meter, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "meters", tuple(self.meters))
        labels = [meter.label for meter in self.meters]
        if len(set(labels)) != len(labels):
            raise LayoutError("Meter layout contains duplicated meters")

    def __len__(self) -> int:
        return len(self.meters)

    def __iter__(self) -> Iterator[Meter]:
        return iter(self.meters)

    def __getitem__(self, index: int) -> Meter:
        return self.meters[index]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(meter.label for meter in self.meters)

    def index_of(self, label: str) -> int:
        return self.labels.index(label)

    def indices(self, kind: str) -> np.ndarray:
        return np.array([m for m, meter in enumerate(self.meters) if meter.kind == kind], dtype=int)

    def bus_meter_index(self, kind: str) -> Dict[int, int]:
        """Bus id -> meter position for single-bus meters of ``kind``."""

        return {meter.bus: m for m, meter in enumerate(self.meters) if meter.kind == kind}

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "MeterLayout":
        return cls(tuple(Meter.from_label(label) for label in labels))


def default_layout(case: NetworkCase) -> MeterLayout:
    """P/Q flow at every branch from-end, P/Q injection and V magnitude at every bus."""

    meters = []
    for kind in ("p_flow", "q_flow"):
        meters.extend(Meter(kind, br.from_bus, br.to_bus) for br in case.branches)
    for kind in ("p_inj", "q_inj", "v_mag"):
        meters.extend(Meter(kind, bus.id) for bus in case.buses)
    return MeterLayout(tuple(meters))


def validate_layout(source: TopologySource, layout: MeterLayout, *, strict: bool = True) -> None:
    """Check that every meter references known buses (and, if strict, existing branches)."""

    known = set(source.bus_ids)
    pairs = source.branch_pairs() if strict else set()
    for meter in layout:
        for bus_id in meter.buses:
            if bus_id not in known:
                raise LayoutError(f"Meter {meter.label} references unknown bus {bus_id}")
        if strict and meter.is_flow and frozenset(meter.buses) not in pairs:
            raise LayoutError(f"Meter {meter.label} references unknown branch {meter.bus}-{meter.to_bus}")


@dataclass(frozen=True, eq=False)
class IncidenceMatrix:
    """Meter x bus membership: row m, column n is 1 iff meter m belongs to bus n's subgroup."""

    matrix: np.ndarray
    bus_ids: Tuple[int, ...]
    meter_labels: Tuple[str, ...]

    @property
    def column(self) -> Dict[int, int]:
        return {bus_id: n for n, bus_id in enumerate(self.bus_ids)}


def build_incidence(source: TopologySource, layout: MeterLayout, *, strict: bool = True) -> IncidenceMatrix:
    validate_layout(source, layout, strict=strict)
    column = {bus_id: n for n, bus_id in enumerate(source.bus_ids)}
    matrix = np.zeros((len(layout), len(column)), dtype=np.int8)
    for m, meter in enumerate(layout):
        for bus_id in meter.buses:
            matrix[m, column[bus_id]] = 1
    return IncidenceMatrix(matrix=matrix, bus_ids=tuple(source.bus_ids), meter_labels=layout.labels)


def subgraph_meters(inc: IncidenceMatrix, buses: Iterable[int]) -> FrozenSet[int]:
    """Meters with a nonzero incidence entry in any of the listed bus columns."""

    column = inc.column
    requested = list(buses)
    unknown = [bus_id for bus_id in requested if bus_id not in column]
    if unknown:
        raise UnknownBusError(f"Unknown bus id(s) in sub-graph query: {unknown}")
    if not requested:
        return frozenset()
    cols = [column[bus_id] for bus_id in requested]
    rows = np.flatnonzero(inc.matrix[:, cols].any(axis=1))
    return frozenset(int(m) for m in rows)


def neighbourhood(source: TopologySource, buses: Iterable[int]) -> FrozenSet[int]:
    """Buses plus every bus sharing a branch with one of them."""

    selected = set(buses)
    expanded = set(selected)
    for pair in source.branch_pairs():
        if pair & selected:
            expanded |= pair
    return frozenset(expanded)


def bus_positions(bus_ids: Sequence[int], wanted: Iterable[int]) -> np.ndarray:
    lookup = {bus_id: n for n, bus_id in enumerate(bus_ids)}
    return np.array([lookup[bus_id] for bus_id in wanted], dtype=int)
