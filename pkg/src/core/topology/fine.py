"""Fine stage: stacked Gauss-Newton refinement of branch g, b and snapshot angles.

Unknowns are the shared branch parameters ``[g; b]`` (2m), one shunt
susceptance per bus (optional) and one angle vector per snapshot
(n - 1 each, reference bus fixed at 0). Bus shunts soak up line charging
and the asymmetric half of off-nominal taps, so the branch pair keeps the
effective series admittance of the π model. Voltage
magnitudes are taken as measured. For every snapshot the injection
mismatch ``[P - P(g, b, θ); Q - Q(g, b, θ)]`` is linearized as

    F_t ≈ A_t Δp + C_t Δθ_t

and the angle blocks are eliminated snapshot by snapshot (Schur complement),
leaving a small system in the shared parameters that is solved with a
truncated pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.topology.buffer import SampleBuffer
from src.core.topology.errors import FineIdentificationDivergence, TopologyLearningError
from src.core.topology.model import InferredBranch, LearnedModel
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)


@dataclass(frozen=True)
class FineConfig:
    max_iterations: int = 60
    tolerance: float = 1e-9  # relative mismatch improvement
    abs_tolerance: float = 1e-10
    rcond: float = 1e-10
    max_halvings: int = 6
    max_growth: int = 3  # consecutive rejected iterations before stopping
    blowup_factor: float = 10.0
    project_conductance: bool = True
    fit_shunts: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tolerance <= 0 or self.abs_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.rcond < 1:
            raise ValueError("rcond must lie in (0, 1)")
        if self.blowup_factor <= 1:
            raise ValueError("blowup_factor must exceed 1")


@dataclass(frozen=True, eq=False)
class _Topology:
    """Index arrays of a candidate branch list over the buffer's buses."""

    from_idx: np.ndarray
    to_idx: np.ndarray
    cf: np.ndarray  # m x n
    ct: np.ndarray  # m x n
    reference: int

    @property
    def n_branch(self) -> int:
        return int(self.from_idx.size)

    @property
    def n_bus(self) -> int:
        return int(self.cf.shape[1])

    @property
    def free(self) -> np.ndarray:
        return np.array([n for n in range(self.n_bus) if n != self.reference], dtype=int)


def _topology(branches: Sequence[InferredBranch], bus_ids: Sequence[int], reference_bus: int) -> _Topology:
    column = {bus_id: n for n, bus_id in enumerate(bus_ids)}
    unknown = {b for br in branches for b in br.pair} - set(column)
    if unknown:
        raise TopologyLearningError(f"Candidate branches reference buses outside the buffer: {sorted(unknown)}", "fine")
    from_idx = np.array([column[br.from_bus] for br in branches], dtype=int)
    to_idx = np.array([column[br.to_bus] for br in branches], dtype=int)
    rows = np.arange(len(branches))
    cf = np.zeros((len(branches), len(bus_ids)))
    ct = np.zeros_like(cf)
    cf[rows, from_idx] = 1.0
    ct[rows, to_idx] = 1.0
    return _Topology(from_idx, to_idx, cf, ct, column[reference_bus])


def branch_terms(topo: _Topology, g: np.ndarray, b: np.ndarray, theta: np.ndarray, v: np.ndarray):
    """Per-branch flows and partial derivatives for every snapshot.

    ``theta`` and ``v`` are (T, n); every returned array is (T, m).
    """

    vf = v[:, topo.from_idx]
    vt = v[:, topo.to_idx]
    delta = theta[:, topo.from_idx] - theta[:, topo.to_idx]
    cos, sin = np.cos(delta), np.sin(delta)
    vv = vf * vt

    flows = {
        "pf": vf * vf * g - vv * (g * cos + b * sin),
        "pt": vt * vt * g - vv * (g * cos - b * sin),
        "qf": -vf * vf * b + vv * (b * cos - g * sin),
        "qt": -vt * vt * b + vv * (b * cos + g * sin),
    }
    partials = {
        "pf_g": vf * vf - vv * cos,
        "pf_b": -vv * sin,
        "pt_g": vt * vt - vv * cos,
        "pt_b": vv * sin,
        "qf_g": -vv * sin,
        "qf_b": -vf * vf + vv * cos,
        "qt_g": vv * sin,
        "qt_b": -vt * vt + vv * cos,
        "pf_d": vv * (g * sin - b * cos),
        "pt_d": vv * (g * sin + b * cos),
        "qf_d": vv * (-b * sin - g * cos),
        "qt_d": vv * (-b * sin + g * cos),
    }
    return flows, partials


def model_injections(topo: _Topology, g, b, theta, v, shunts=None) -> Tuple[np.ndarray, np.ndarray]:
    """Injections P, Q of shape (T, n) implied by branch parameters, bus shunts and angles."""

    flows, _ = branch_terms(topo, g, b, theta, v)
    p = flows["pf"] @ topo.cf + flows["pt"] @ topo.ct
    q = flows["qf"] @ topo.cf + flows["qt"] @ topo.ct
    if shunts is not None:
        q = q - v * v * shunts
    return p, q


def stacked_jacobian(topo: _Topology, g, b, theta, v) -> Tuple[np.ndarray, np.ndarray]:
    """Per-snapshot Jacobians of [P; Q] (T, 2n, ·): wrt [g; b] and wrt free angles."""

    _, d = branch_terms(topo, g, b, theta, v)
    n_t = theta.shape[0]
    n_bus, n_br = topo.n_bus, topo.n_branch
    cols = np.arange(n_br)

    a = np.zeros((n_t, 2 * n_bus, 2 * n_br))
    a[:, topo.from_idx, cols] = d["pf_g"]
    a[:, topo.to_idx, cols] = d["pt_g"]
    a[:, topo.from_idx, n_br + cols] = d["pf_b"]
    a[:, topo.to_idx, n_br + cols] = d["pt_b"]
    a[:, n_bus + topo.from_idx, cols] = d["qf_g"]
    a[:, n_bus + topo.to_idx, cols] = d["qt_g"]
    a[:, n_bus + topo.from_idx, n_br + cols] = d["qf_b"]
    a[:, n_bus + topo.to_idx, n_br + cols] = d["qt_b"]

    # dΔ/dθ = Cf - Ct per branch
    diff = topo.cf - topo.ct
    c = np.concatenate(
        [
            np.einsum("kn,tk,kj->tnj", topo.cf, d["pf_d"], diff) + np.einsum("kn,tk,kj->tnj", topo.ct, d["pt_d"], diff),
            np.einsum("kn,tk,kj->tnj", topo.cf, d["qf_d"], diff) + np.einsum("kn,tk,kj->tnj", topo.ct, d["qt_d"], diff),
        ],
        axis=1,
    )
    return a, c[:, :, topo.free]


def dc_angles(topo: _Topology, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """DC power-flow angles (T, n) from a Laplacian weighted by -b."""

    weights = np.maximum(-b, 1e-3 * max(float(np.max(np.abs(b), initial=0.0)), 1e-6))
    diff = topo.cf - topo.ct
    laplacian = diff.T @ (weights[:, None] * diff)
    free = topo.free
    reduced = laplacian[np.ix_(free, free)]
    theta = np.zeros((p.shape[0], topo.n_bus))
    theta[:, free] = np.linalg.lstsq(reduced, p[:, free].T, rcond=None)[0].T
    return theta


def shunt_jacobian(v: np.ndarray) -> np.ndarray:
    """Jacobian of [P; Q] (T, 2n, n) wrt per-bus shunt susceptance."""

    n_t, n_bus = v.shape
    block = np.zeros((n_t, 2 * n_bus, n_bus))
    buses = np.arange(n_bus)
    block[:, n_bus + buses, buses] = -v * v
    return block


def _mismatch(topo, g, b, shunts, theta, buf_t) -> Tuple[np.ndarray, float]:
    p_meas, q_meas, v = buf_t
    p, q = model_injections(topo, g, b, theta, v, shunts)
    residual = np.concatenate([p_meas - p, q_meas - q], axis=1)
    return residual, float(np.linalg.norm(residual))


def fine_identify(
    initial: Sequence[InferredBranch],
    buf: SampleBuffer,
    cfg: Optional[FineConfig] = None,
    *,
    reference_bus: Optional[int] = None,
    initial_angles: Optional[np.ndarray] = None,
    initial_shunts: Optional[Sequence[float]] = None,
) -> LearnedModel:
    """Refine ``initial`` branch parameters against the buffer's injections.

    ``initial_angles`` (buses x T) replaces the DC warm start when given.
    Iterations stop when the relative improvement drops below
    ``cfg.tolerance`` or when ``cfg.max_growth`` consecutive damped steps
    cannot lower the mismatch (the noise floor); the best iterate is
    returned in both cases. Divergence is reported only when the trial
    mismatches stop being finite or exceed ``blowup_factor`` times the
    starting value.
    """

    cfg = cfg or FineConfig()
    if not initial:
        raise TopologyLearningError("No candidate branches to refine", stage="fine")
    reference_bus = min(buf.bus_ids) if reference_bus is None else reference_bus
    topo = _topology(initial, buf.bus_ids, reference_bus)
    n_br = topo.n_branch
    free = topo.free

    buf_t = (buf.p.T, buf.q.T, buf.v.T)
    g = np.array([br.g for br in initial], dtype=float)
    b = np.array([br.b for br in initial], dtype=float)
    shunts: Optional[np.ndarray] = None
    if cfg.fit_shunts:
        shunts = np.zeros(buf.n_bus) if initial_shunts is None else np.array(initial_shunts, dtype=float)
        if shunts.shape != (buf.n_bus,):
            raise TopologyLearningError("initial_shunts needs one value per bus", stage="fine")
    if cfg.project_conductance:
        g = np.maximum(g, 0.0)
    if initial_angles is not None:
        theta = np.array(initial_angles, dtype=float).T.copy()
        if theta.shape != (buf.n_samples, buf.n_bus):
            raise TopologyLearningError("initial_angles must be (buses x T)", stage="fine")
        theta -= theta[:, [topo.reference]]
    else:
        theta = dc_angles(topo, b, buf_t[0])

    residual, norm = _mismatch(topo, g, b, shunts, theta, buf_t)
    if not np.isfinite(norm):
        raise FineIdentificationDivergence("Initial mismatch is not finite", [(0, norm)])
    start_norm = norm
    history: List[Tuple[int, float]] = [(0, norm)]
    accepted_norms = [norm]
    shunt_block = shunt_jacobian(buf_t[2]) if shunts is not None else None
    mu = 0.0
    stalls = 0
    blowups = 0
    iteration = 0
    LOGGER.debug("Fine identification start: %d branches, T=%d, mismatch %.4e", n_br, buf.n_samples, norm)

    while iteration < cfg.max_iterations and norm > cfg.abs_tolerance:
        iteration += 1
        a, c = stacked_jacobian(topo, g, b, theta, buf_t[2])
        if shunt_block is not None:
            a = np.concatenate([a, shunt_block], axis=2)
        ct_c = np.einsum("tij,tik->tjk", c, c)
        ct_a = np.einsum("tij,tik->tjk", c, a)
        ct_f = np.einsum("tij,ti->tj", c, residual)
        m_inv = np.linalg.pinv(ct_c, rcond=cfg.rcond, hermitian=True)

        m_inv_ct_a = m_inv @ ct_a
        m_inv_ct_f = np.einsum("tjk,tk->tj", m_inv, ct_f)
        schur = np.einsum("tij,tik->jk", a, a) - np.einsum("tji,tjl->il", ct_a, m_inv_ct_a)
        rhs = np.einsum("tij,ti->j", a, residual) - np.einsum("tji,tj->i", ct_a, m_inv_ct_f)
        scale = float(np.trace(schur)) / schur.shape[0] if schur.size else 1.0
        d_params = np.linalg.pinv(schur + mu * scale * np.eye(schur.shape[0]), rcond=cfg.rcond) @ rhs
        d_theta = m_inv_ct_f - m_inv_ct_a @ d_params

        step = 1.0
        accepted = False
        best_try = np.inf
        for _ in range(cfg.max_halvings):
            g_try = g + step * d_params[:n_br]
            b_try = b + step * d_params[n_br : 2 * n_br]
            shunts_try = None if shunts is None else shunts + step * d_params[2 * n_br :]
            if cfg.project_conductance:
                g_try = np.maximum(g_try, 0.0)
            theta_try = theta.copy()
            theta_try[:, free] += step * d_theta
            residual_try, norm_try = _mismatch(topo, g_try, b_try, shunts_try, theta_try, buf_t)
            if np.isfinite(norm_try):
                best_try = min(best_try, norm_try)
            if norm_try < norm:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            stalls += 1
            blowups = blowups + 1 if best_try > cfg.blowup_factor * start_norm else 0
            mu = max(10.0 * mu, 1e-6)
            history.append((iteration, best_try))
            LOGGER.debug("Fine iteration %d rejected (best trial %.4e), levenberg mu=%.1e", iteration, best_try, mu)
            if blowups >= cfg.max_growth:
                raise FineIdentificationDivergence(
                    f"Mismatch grew past {cfg.blowup_factor:g}x its start in {blowups} consecutive damped iterations",
                    history,
                )
            if stalls >= cfg.max_growth:
                LOGGER.info("Fine identification at its mismatch floor after %d iterations", iteration)
                break
            continue

        improvement = (norm - norm_try) / norm
        g, b, shunts, theta, residual, norm = g_try, b_try, shunts_try, theta_try, residual_try, norm_try
        stalls = blowups = 0
        mu = mu / 10.0 if mu > 1e-9 else 0.0
        history.append((iteration, norm))
        accepted_norms.append(norm)
        LOGGER.debug("Fine iteration %d: mismatch %.4e step %.3g", iteration, norm, step)
        if improvement < cfg.tolerance:
            break

    LOGGER.info("Fine identification finished: %d iterations, mismatch %.4e", iteration, norm)
    branches = tuple(
        InferredBranch(br.from_bus, br.to_bus, float(g[k]), float(b[k])) for k, br in enumerate(initial)
    )
    return LearnedModel(
        bus_ids=buf.bus_ids,
        branches=branches,
        reference_bus=reference_bus,
        angles=theta.T.copy(),
        mismatch=norm,
        iterations=iteration,
        sample_count=buf.n_samples,
        bus_shunts=None if shunts is None else tuple(float(s) for s in shunts),
        mismatch_history=tuple(accepted_norms),
    )


def calibrate_end_shunts(model: LearnedModel, buf: SampleBuffer) -> LearnedModel:
    """Move fitted bus shunt susceptance onto the branch ends that have reactive flow meters.

    For a flow read at ``near`` towards ``far`` the series-only prediction is
    subtracted and the remainder is fitted as ``-V_near**2 * b_end`` by least
    squares over all snapshots. Whatever the flow meters do not explain stays
    as a bus shunt.
    """

    if model.bus_shunts is None or model.angles is None or not buf.flow_ends:
        return model
    if tuple(model.bus_ids) != tuple(buf.bus_ids):
        raise TopologyLearningError("Model and buffer cover different buses", stage="fine")
    column = {bus_id: n for n, bus_id in enumerate(buf.bus_ids)}
    by_ends = {}
    for k, br in enumerate(model.branches):
        by_ends.setdefault((br.from_bus, br.to_bus), (k, 0))
        by_ends.setdefault((br.to_bus, br.from_bus), (k, 1))

    shunts = np.array(model.bus_shunts, dtype=float)
    ends = np.zeros((len(model.branches), 2))
    done = set()
    for row, (near, far) in enumerate(buf.flow_ends):
        hit = by_ends.get((near, far))
        if hit is None or hit in done:
            continue
        k, side = hit
        br = model.branches[k]
        v_near, v_far = buf.v[column[near]], buf.v[column[far]]
        delta = model.angles[column[near]] - model.angles[column[far]]
        series = -v_near * v_near * br.b + v_near * v_far * (br.b * np.cos(delta) - br.g * np.sin(delta))
        remainder = buf.q_flow[row] - series
        v2 = v_near * v_near
        ends[k, side] = -float(np.dot(remainder, v2) / np.dot(v2, v2))
        shunts[column[near]] -= ends[k, side]
        done.add(hit)

    branches = tuple(
        InferredBranch(br.from_bus, br.to_bus, br.g, br.b, b_sh=float(ends[k, 0]), b_sh_to=float(ends[k, 1]))
        for k, br in enumerate(model.branches)
    )
    LOGGER.debug("End shunts calibrated from %d flow meters", len(done))
    notes = {**model.notes, "end_shunts": str(len(done))}
    return model.with_branches(branches, bus_shunts=tuple(float(s) for s in shunts), notes=notes)
