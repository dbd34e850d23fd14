"""Sample buffers: bus injections and voltage magnitudes stacked over time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from src.core.measurements import MeasurementSet
from src.core.network import MeterLayout
from src.core.topology.errors import TopologyLearningError

FlowEnds = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True, eq=False)
class SampleBuffer:
    """P, Q and V matrices of shape (buses, T), columns in time order.

    ``flow_ends`` lists ``(measuring bus, far bus)`` for every reactive
    branch-flow reading kept in ``q_flow`` (rows aligned, shape (k, T)).
    The learner only uses them to split shunt susceptance between branch ends.
    """

    bus_ids: Tuple[int, ...]
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    timestamps: np.ndarray
    flow_ends: FlowEnds = ()
    q_flow: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "bus_ids", tuple(int(b) for b in self.bus_ids))
        arrays = [np.atleast_2d(np.asarray(getattr(self, name), dtype=float)) for name in ("p", "q", "v")]
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays) or shape[0] != len(self.bus_ids):
            raise TopologyLearningError("P, Q and V must all be (bus count x T)", stage="input")
        if shape[1] < 1:
            raise TopologyLearningError("Sample buffer needs at least one snapshot", stage="input")
        timestamps = np.asarray(self.timestamps, dtype=float)
        if timestamps.shape != (shape[1],):
            raise TopologyLearningError("One timestamp per snapshot is required", stage="input")
        if np.any(np.diff(timestamps) <= 0):
            raise TopologyLearningError("Timestamps must be strictly increasing", stage="input")
        if np.any(arrays[2] <= 0):
            raise TopologyLearningError("Voltage magnitudes must be positive", stage="input")
        for name, array in zip(("p", "q", "v"), arrays):
            object.__setattr__(self, name, array)
        object.__setattr__(self, "timestamps", timestamps)

        ends = tuple((int(a), int(b)) for a, b in self.flow_ends)
        flows = np.zeros((0, shape[1])) if self.q_flow is None else np.atleast_2d(np.asarray(self.q_flow, dtype=float))
        if flows.shape != (len(ends), shape[1]):
            raise TopologyLearningError("q_flow must be (flow reading count x T)", stage="input")
        outside = {bus for end in ends for bus in end} - set(self.bus_ids)
        if outside:
            raise TopologyLearningError(f"Flow readings reference unknown buses: {sorted(outside)}", stage="input")
        object.__setattr__(self, "flow_ends", ends)
        object.__setattr__(self, "q_flow", flows)

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_samples(self) -> int:
        return int(self.p.shape[1])

    def head(self, count: int) -> "SampleBuffer":
        """First ``count`` snapshots."""

        if count < 1:
            raise TopologyLearningError("count must be positive", stage="input")
        return SampleBuffer(
            self.bus_ids,
            self.p[:, :count],
            self.q[:, :count],
            self.v[:, :count],
            self.timestamps[:count],
            self.flow_ends,
            self.q_flow[:, :count],
        )

    def subset(self, buses: Iterable[int]) -> "SampleBuffer":
        """Rows for a bus subset (ids kept in buffer order); flows with both ends inside survive."""

        wanted = set(buses)
        unknown = wanted - set(self.bus_ids)
        if unknown:
            raise TopologyLearningError(f"Unknown buses in region: {sorted(unknown)}", stage="input")
        rows = [n for n, bus_id in enumerate(self.bus_ids) if bus_id in wanted]
        ids = tuple(self.bus_ids[n] for n in rows)
        kept = [k for k, (a, b) in enumerate(self.flow_ends) if a in wanted and b in wanted]
        return SampleBuffer(
            ids,
            self.p[rows],
            self.q[rows],
            self.v[rows],
            self.timestamps,
            tuple(self.flow_ends[k] for k in kept),
            self.q_flow[kept],
        )

    @classmethod
    def from_measurements(
        cls, snapshots: Sequence[MeasurementSet], layout: Optional[MeterLayout] = None
    ) -> "SampleBuffer":
        """Extract injection and magnitude meters; every bus needs p_inj, q_inj and v_mag.

        Reactive flow meters are carried along when the layout has them.
        """

        if not snapshots:
            raise TopologyLearningError("No snapshots collected", stage="input")
        layout = layout or snapshots[0].layout
        p_index = layout.bus_meter_index("p_inj")
        q_index = layout.bus_meter_index("q_inj")
        v_index = layout.bus_meter_index("v_mag")
        bus_ids = tuple(sorted(set(p_index) | set(q_index) | set(v_index)))
        incomplete = [b for b in bus_ids if b not in p_index or b not in q_index or b not in v_index]
        if incomplete or not bus_ids:
            raise TopologyLearningError(
                f"Buses without complete injection/voltage metering: {incomplete}", stage="input"
            )
        z = np.column_stack([snapshot.z for snapshot in snapshots])

        def rows(index):
            return z[[index[b] for b in bus_ids]]

        flow_rows = [int(m) for m in layout.indices("q_flow")]
        flow_ends = tuple((layout[m].bus, layout[m].to_bus) for m in flow_rows)
        timestamps = np.array([snapshot.t for snapshot in snapshots])
        return cls(bus_ids, rows(p_index), rows(q_index), rows(v_index), timestamps, flow_ends, z[flow_rows])
