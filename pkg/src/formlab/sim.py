"""Closed-loop formation simulation: agent laws, events, spans, and logging.

Single-integrator agents run under two laws. Leaders (and agents flying in
to join) chase their commanded targets through a saturated tracking law;
followers run the distributed constraint law in one of two modes. Implicit
mode solves the coupled linear system at every derivative evaluation, which
reproduces the exact error dynamics. Causal mode feeds each follower only
its neighbors' previous-step velocities, which is all a real distributed
deployment can measure; it trades exactness for honesty.

The driver slices time into spans at every structural change (segment
boundary, axis switch, agent spawn or join) and hands each span to an
integration backend as a packed problem. Events are processed between spans,
so no integration step ever straddles one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from formlab import backend as backend_mod
from formlab import laplacian, maneuver
from formlab._span import (
    INTEGRATOR_EULER,
    INTEGRATOR_RK4,
    MODE_CAUSAL,
    MODE_IMPLICIT,
    SpanProblem,
    profile_code,
)
from formlab.errors import FormationError, LocalizabilityError, SimulationError
from formlab.geometry import RotationAxis, skew

JOIN_POSITION_TOL = 1e-4

_TIME_TOL = 1e-9
_MODE_CODES = {"implicit": MODE_IMPLICIT, "causal": MODE_CAUSAL}
_INTEGRATOR_CODES = {"euler": INTEGRATOR_EULER, "rk4": INTEGRATOR_RK4}


@dataclass(frozen=True)
class ControlGains:
    """Loop gains. The follower law scales its position feedback by alpha;
    the leader law's feedback is the unit-gain saturated term."""

    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class FlyingAgent:
    """A spawned agent still flying toward its joining position."""

    join: maneuver.AgentJoin
    agent_id: int


@dataclass
class SimState:
    """Snapshot of the closed loop at one instant.

    Positions and velocities are stored as (n, 3) arrays even for planar
    scenarios (z stays identically zero). Row layout: the active frame's
    agents in frame order (followers first, then leaders), then any flying
    agents in spawn order. ``ids`` labels each row with its scenario agent
    id; ``velocities`` holds the commanded velocity of the last completed
    step and is zero before the first one.
    """

    t: float
    schedule: maneuver.ManeuverSchedule
    frame: maneuver.NominalFrame
    positions: np.ndarray
    velocities: np.ndarray
    ids: tuple
    flying: tuple = ()
    mode: str = "implicit"

    def __post_init__(self):
        n = self.frame.formation.n + len(self.flying)
        self.positions = np.array(self.positions, dtype=float).reshape(n, 3)
        self.velocities = np.array(self.velocities, dtype=float).reshape(n, 3)
        self.ids = tuple(int(i) for i in self.ids)
        if len(self.ids) != n:
            raise SimulationError(
                f"state has {n} agent rows but {len(self.ids)} ids"
            )
        if self.mode not in _MODE_CODES:
            raise ValueError(f"unknown follower mode {self.mode!r}")

    @property
    def n_frame(self) -> int:
        return self.frame.formation.n

    @property
    def n_followers(self) -> int:
        return self.frame.formation.n_followers

    @property
    def n_active(self) -> int:
        return self.n_frame + len(self.flying)

    def roles(self) -> tuple:
        n_f = self.n_followers
        n_l = self.n_frame - n_f
        return ("follower",) * n_f + ("leader",) * n_l + ("joining",) * len(self.flying)


@dataclass(frozen=True)
class TrackingErrors:
    """Per-role error arrays, z-padded to 3 components in planar runs."""

    leader: np.ndarray
    follower: np.ndarray
    flying: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.vstack([self.follower, self.leader, self.flying])


def leader_velocity(p_i, p_star_i, p_star_dot_i) -> np.ndarray:
    """Saturated target chase: feed-forward plus a componentwise bounded pull.

    Each feedback component has magnitude below 1, so a leader never commands
    more than 1 m/s of corrective speed per axis regardless of how far away
    the target is.
    """
    p_i = np.asarray(p_i, dtype=float)
    p_star_i = np.asarray(p_star_i, dtype=float)
    p_star_dot_i = np.asarray(p_star_dot_i, dtype=float)
    return -np.tanh(p_i - p_star_i) + p_star_dot_i


def follower_velocities_implicit(
    frame: maneuver.NominalFrame,
    p_f,
    p_l,
    p_l_dot,
    gains: ControlGains | None = None,
) -> np.ndarray:
    """All follower velocities from the coupled linear law, solved exactly.

    Solves W_ff v_f = -W_fl v_l - alpha (W_ff p_f + W_fl p_l) for the stacked
    follower velocity vector. Under these dynamics the follower tracking
    error decays as e' = -alpha e with no discretization bias beyond the
    integrator's own. Inputs may be stacked configurations or (n, d) arrays.
    """
    gains = gains if gains is not None else ControlGains()
    w_ff, w_fl, _, _ = laplacian.partition_blocks(frame.laplacian)
    p_f = np.asarray(p_f, dtype=float).reshape(-1)
    p_l = np.asarray(p_l, dtype=float).reshape(-1)
    v_l = np.asarray(p_l_dot, dtype=float).reshape(-1)
    if p_f.shape[0] != w_ff.shape[0] or p_l.shape[0] != w_fl.shape[1]:
        raise SimulationError(
            f"configuration sizes ({p_f.shape[0]}, {p_l.shape[0]}) do not match "
            f"the frame's follower block {w_ff.shape[0]}x{w_fl.shape[1]}"
        )
    rhs = -(w_fl @ v_l) - gains.alpha * (w_ff @ p_f + w_fl @ p_l)
    with np.errstate(divide="ignore", invalid="ignore"):
        sol = scipy.linalg.solve(w_ff, rhs)
    if not np.all(np.isfinite(sol)):
        raise LocalizabilityError(
            "follower block is singular; cannot evaluate the implicit law"
        )
    return sol


def follower_velocity_causal(
    agent,
    rel_positions,
    neighbor_velocities,
    weights,
    axis,
    gains: ControlGains | None = None,
    dimension: int = 3,
) -> np.ndarray:
    """One follower's distributed law from purely local measurements.

    ``rel_positions`` holds p_i - p_j for each neighbor j and
    ``neighbor_velocities`` the matching previous-step velocities. The output
    is gamma^-1 sum_j w_ij (alpha (p_j - p_i) + v_j) with gamma the sum of
    the realized edge weights; a singular gamma aborts with the agent named,
    since that agent's gain is undefined no matter what its neighbors do.
    Returns a 3-vector (z zero in planar runs).
    """
    gains = gains if gains is not None else ControlGains()
    if dimension not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dimension}")
    d = dimension
    rel = np.asarray(rel_positions, dtype=float).reshape(-1, 3)[:, :d]
    vel = np.asarray(neighbor_velocities, dtype=float).reshape(-1, 3)[:, :d]
    if not (rel.shape[0] == vel.shape[0] == len(weights)):
        raise SimulationError(
            "need one relative position, one velocity, and one weight per neighbor"
        )
    blocks = [laplacian.realize_weight(w, axis)[:d, :d] for w in weights]
    gamma = np.zeros((d, d))
    acc = np.zeros(d)
    for blk, rel_j, v_j in zip(blocks, rel, vel):
        gamma += blk
        acc += blk @ (gains.alpha * (-rel_j) + v_j)
    svals = np.linalg.svd(gamma, compute_uv=False)
    if svals[0] == 0.0 or svals[-1] / svals[0] <= laplacian.RCOND_FLOOR:
        raise SimulationError(
            f"agent {agent}: the summed neighbor weight is singular "
            f"(rcond {0.0 if svals[0] == 0.0 else svals[-1] / svals[0]:.3e}); "
            "the distributed law has no well-defined gain"
        )
    out = np.zeros(3)
    out[:d] = np.linalg.solve(gamma, acc)
    return out


def _pad3(arr: np.ndarray) -> np.ndarray:
    """(n, d) -> (n, 3), zero-padding z for planar runs."""
    arr = np.asarray(arr, dtype=float)
    if arr.shape[1] == 3:
        return arr.copy()
    out = np.zeros((arr.shape[0], 3))
    out[:, : arr.shape[1]] = arr
    return out


def _flyer_offset(frame: maneuver.NominalFrame, join: maneuver.AgentJoin) -> np.ndarray:
    """The join offset carried into the current frame (a vector, so the base
    transform contributes rotation and scale but no translation)."""
    off = np.asarray(join.offset, dtype=float).reshape(3)
    return frame.base.scale * (frame.base.rotation @ off)


def _flyer_target(frame, sample, off_cur):
    """Fly-in target and its velocity for one flying agent."""
    rot = sample.rotation
    tgt = frame.center + sample.translation + sample.scale * (rot @ off_cur)
    gain = sample.scale_rate * rot + sample.scale * sample.rotation_rate
    return tgt, sample.translation_rate + gain @ off_cur


def _implicit_entry(cache: dict, frame: maneuver.NominalFrame):
    """LU-factored follower block for a frame, built once per frame."""
    key = ("implicit", id(frame.laplacian))
    if key not in cache:
        w_ff, w_fl, _, _ = laplacian.partition_blocks(frame.laplacian)
        w_ff = np.ascontiguousarray(w_ff)
        w_fl = np.ascontiguousarray(w_fl)
        lu, piv = scipy.linalg.lu_factor(w_ff)
        cache[key] = (w_ff, w_fl, lu, piv)
    return cache[key]


def _causal_entry(cache: dict, frame: maneuver.NominalFrame, ids: tuple):
    """Flattened edge list and inverted per-follower weight sums."""
    key = ("causal", id(frame.laplacian))
    if key not in cache:
        lap = frame.laplacian
        d = lap.dimension
        graph = frame.formation.graph
        ptr = [0]
        dst = []
        blocks = []
        gamma_inv = np.zeros((lap.n_followers, d, d))
        for i in range(lap.n_followers):
            gamma = np.zeros((d, d))
            for j in graph.neighbors[i]:
                blk = laplacian.realize_weight(lap.coeffs[(i, j)], lap.axis)[:d, :d]
                dst.append(j)
                blocks.append(blk)
                gamma += blk
            ptr.append(len(dst))
            svals = np.linalg.svd(gamma, compute_uv=False)
            if svals[0] == 0.0 or svals[-1] / svals[0] <= laplacian.RCOND_FLOOR:
                raise SimulationError(
                    f"agent {ids[i]}: the summed neighbor weight is singular; "
                    "the distributed law cannot run on this frame"
                )
            gamma_inv[i] = np.linalg.inv(gamma)
        cache[key] = (
            np.asarray(ptr, dtype=np.int32),
            np.asarray(dst, dtype=np.int32),
            np.asarray(blocks, dtype=float).reshape(len(dst), d, d),
            gamma_inv,
        )
    return cache[key]


def _pack_span(
    state: SimState,
    gains: ControlGains,
    integrator: str,
    t_to: float,
    dt: float,
    stride: int,
    step0: int,
    cache: dict,
) -> SpanProblem:
    """Freeze the current structure into a backend-ready span problem."""
    if integrator not in _INTEGRATOR_CODES:
        raise ValueError(f"unknown integrator {integrator!r}")
    frame = state.frame
    d = frame.dimension
    seg = state.schedule.segment_at(state.t)
    n_f = state.n_followers
    n_l = state.n_frame - n_f

    lead_rel = (frame.positions[n_f:] - frame.center)[:, :d]
    fly_rel = np.zeros((len(state.flying), d))
    for k, fly in enumerate(state.flying):
        fly_rel[k] = _flyer_offset(frame, fly.join)[:d]

    kwargs = {}
    if state.mode == "implicit":
        w_ff, w_fl, lu, piv = _implicit_entry(cache, frame)
        kwargs = {"w_ff": w_ff, "w_fl": w_fl, "lu": lu, "piv": piv}
    else:
        ptr, dst, blocks, gamma_inv = _causal_entry(cache, frame, state.ids)
        kwargs = {
            "edge_ptr": ptr,
            "edge_dst": dst,
            "edge_w": blocks,
            "gamma_inv": gamma_inv,
        }

    return SpanProblem(
        dim=d,
        n_followers=n_f,
        n_leaders=n_l,
        n_flying=len(state.flying),
        t0=state.t,
        t_end=t_to,
        dt=dt,
        alpha=gains.alpha,
        mode=_MODE_CODES[state.mode],
        integrator=_INTEGRATOR_CODES[integrator],
        p0=state.positions[:, :d],
        v0=state.velocities[:, :d],
        center=frame.center[:d],
        track_rel=np.vstack([lead_rel, fly_rel]) if n_l + len(state.flying) else np.zeros((0, d)),
        axis_gen=skew(frame.axis)[:d, :d],
        seg_t0=seg.t_start,
        seg_t1=seg.t_end,
        kind_translation=profile_code(seg.translation.kind),
        kind_scale=profile_code(seg.scale.kind),
        kind_angle=profile_code(seg.angle.kind),
        translation_from=np.asarray(seg.translation.start, dtype=float).reshape(3)[:d],
        translation_to=np.asarray(seg.translation.end, dtype=float).reshape(3)[:d],
        scale_from=float(np.asarray(seg.scale.start)),
        scale_to=float(np.asarray(seg.scale.end)),
        angle_from=float(np.asarray(seg.angle.start)),
        angle_to=float(np.asarray(seg.angle.end)),
        stride=stride,
        step0=step0,
        **kwargs,
    )


def _event_times(schedule: maneuver.ManeuverSchedule) -> list:
    times = list(schedule.boundaries())
    times.extend(sw.t for sw in schedule.switches)
    for jn in schedule.joins:
        times.append(jn.t_start)
        times.append(jn.t_join)
    return times


def _next_breakpoint(state: SimState) -> float:
    later = [b for b in _event_times(state.schedule) if b > state.t + _TIME_TOL]
    return min(later) if later else state.schedule.t_end


def step(
    state: SimState,
    dt: float,
    integrator: str = "rk4",
    gains: ControlGains | None = None,
) -> SimState:
    """Advance every agent one integration step and return the new state.

    The step never straddles a structural boundary: dt is clipped so the
    state lands exactly on the next segment boundary, axis switch, or join
    time when one is closer than dt. Event processing itself is the caller's
    job once the state sits on the event time.
    """
    gains = gains if gains is not None else ControlGains()
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    horizon = state.schedule.t_end
    if state.t >= horizon - _TIME_TOL:
        raise SimulationError(f"cannot step past the schedule horizon t={horizon}")
    t_to = min(state.t + dt, _next_breakpoint(state))
    prob = _pack_span(
        state, gains, integrator, t_to=t_to, dt=dt, stride=2**30, step0=0, cache={}
    )
    res = backend_mod.integrate_span(prob)
    return replace(
        state,
        t=t_to,
        positions=_pad3(res.p_final),
        velocities=_pad3(res.v_final),
    )


def tracking_errors(state: SimState) -> TrackingErrors:
    """Current tracking errors for every agent, grouped by role.

    Leader and fly-in errors compare measured positions against the commanded
    targets at the state time. The follower error is the constraint-law error
    vector p_f + W_ff^-1 W_fl p_l, computed by a fresh solve, so it measures
    distance from the unique leader-pinned equilibrium rather than from any
    integrator-dependent reference.
    """
    frame = state.frame
    d = frame.dimension
    n_f = state.n_followers
    sample = maneuver.evaluate(state.schedule, state.t)
    targets = maneuver.target_configuration(frame, sample)

    lead_err = state.positions[n_f : state.n_frame] - targets[n_f:]

    w_ff, w_fl, _, _ = laplacian.partition_blocks(frame.laplacian)
    p_f = state.positions[:n_f, :d].reshape(-1)
    p_l = state.positions[n_f : state.n_frame, :d].reshape(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pinned = scipy.linalg.solve(w_ff, w_fl @ p_l)
    if not np.all(np.isfinite(pinned)):
        raise LocalizabilityError(
            "follower block is singular; tracking errors are undefined"
        )
    fol_err = _pad3((p_f + pinned).reshape(n_f, d))

    fly_err = np.zeros((len(state.flying), 3))
    for k, fly in enumerate(state.flying):
        off_cur = _flyer_offset(frame, fly.join)
        tgt, _ = _flyer_target(frame, sample, off_cur)
        fly_err[k] = state.positions[state.n_frame + k] - tgt

    return TrackingErrors(leader=lead_err, follower=fol_err, flying=fly_err)


def process_agent_join(state: SimState, join: maneuver.AgentJoin, seed: int = 0) -> SimState:
    """Turn a flying agent into follower 0 of an extended frame.

    Preconditions checked here: the agent must actually be flying, and must
    sit within JOIN_POSITION_TOL of its commanded joining position. The
    extension itself can reject the join when the grown follower block is
    too ill-conditioned or the newcomer's summed weight is singular; in
    either case the original frame is left untouched.
    """
    fly = next((f for f in state.flying if f.join is join or f.join == join), None)
    if fly is None:
        raise SimulationError(
            "join event does not match any flying agent; spawn it first"
        )
    frame = state.frame
    sample = maneuver.evaluate(state.schedule, state.t)
    off_cur = _flyer_offset(frame, join)
    tgt, _ = _flyer_target(frame, sample, off_cur)
    row = state.n_frame + state.flying.index(fly)
    gap = float(np.max(np.abs(state.positions[row] - tgt)))
    if gap > JOIN_POSITION_TOL:
        raise SimulationError(
            f"joining agent {fly.agent_id} is {gap:.3e} m from its joining "
            f"position at t={state.t:g}; the join precondition is not met"
        )

    frame_rows = []
    for nid in join.neighbors:
        try:
            frame_rows.append(state.ids[: state.n_frame].index(int(nid)))
        except ValueError:
            raise FormationError(
                f"join neighbor id {nid} is not part of the formation"
            ) from None
    new_frame = maneuver.apply_agent_join(frame, join.offset, frame_rows, seed=seed)

    d = new_frame.dimension
    gamma = np.zeros((d, d))
    for j in new_frame.formation.graph.neighbors[0]:
        gamma += laplacian.realize_weight(
            new_frame.laplacian.coeffs[(0, j)], new_frame.axis
        )[:d, :d]
    svals = np.linalg.svd(gamma, compute_uv=False)
    if svals[0] == 0.0 or svals[-1] / svals[0] <= laplacian.RCOND_FLOOR:
        raise LocalizabilityError(
            f"joining agent {fly.agent_id}: the summed neighbor weight is "
            "singular, so the distributed law could never run; the join is rejected"
        )

    keep = [k for k, f in enumerate(state.flying) if f is not fly]
    order = [row] + list(range(state.n_frame)) + [state.n_frame + k for k in keep]
    return SimState(
        t=state.t,
        schedule=state.schedule,
        frame=new_frame,
        positions=state.positions[order],
        velocities=state.velocities[order],
        ids=tuple(state.ids[k] for k in order),
        flying=tuple(state.flying[k] for k in keep),
        mode=state.mode,
    )


@dataclass(frozen=True)
class SpanLog:
    """Logged samples of one span: fixed roster, fixed frame, one segment."""

    ids: tuple
    roles: tuple
    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    errors: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class SwitchRecord:
    t: float
    old_axis: tuple
    new_axis: tuple
    rcond: float
    retries: int


@dataclass(frozen=True)
class SpawnRecord:
    t: float
    agent_id: int


@dataclass(frozen=True)
class JoinRecord:
    t: float
    agent_id: int
    fly_gap: float
    rcond: float
    retries: int


@dataclass(frozen=True)
class SimResult:
    """Everything a run produced: logs, events, frames, final state, manifest."""

    spans: tuple
    events: tuple
    frames: tuple
    state: SimState
    manifest: dict

    def sample_times(self) -> np.ndarray:
        return np.concatenate([span.t for span in self.spans])

    def residuals(self) -> np.ndarray:
        return np.concatenate([span.residual for span in self.spans])

    def samples(self):
        """Yield (t, agent_id, role, position, velocity, error) per agent row."""
        for span in self.spans:
            for r in range(span.t.shape[0]):
                for a in range(len(span.ids)):
                    yield (
                        float(span.t[r]),
                        span.ids[a],
                        span.roles[a],
                        span.positions[r, a],
                        span.velocities[r, a],
                        span.errors[r, a],
                    )

    def agent_series(self, agent_id: int):
        """Time, position, and error history of one agent across spans."""
        ts, ps, es = [], [], []
        for span in self.spans:
            if agent_id not in span.ids:
                continue
            a = span.ids.index(agent_id)
            ts.append(span.t)
            ps.append(span.positions[:, a])
            es.append(span.errors[:, a])
        if not ts:
            raise KeyError(f"agent {agent_id} never appears in the log")
        return np.concatenate(ts), np.vstack(ps), np.vstack(es)


def _state_row_log(state: SimState) -> SpanLog:
    """A single-sample log of the state as it stands (used for t = t0)."""
    err = tracking_errors(state).stacked()
    d = state.frame.dimension
    cfg = state.positions[: state.n_frame, :d].reshape(-1)
    return SpanLog(
        ids=state.ids,
        roles=state.roles(),
        t=np.array([state.t]),
        positions=state.positions[None, :, :].copy(),
        velocities=state.velocities[None, :, :].copy(),
        errors=err[None, :, :],
        residual=np.array([laplacian.similarity_residual(state.frame.laplacian, cfg)]),
    )


def _span_log(state: SimState, seg, res, cache: dict) -> SpanLog:
    """Attach errors and kernel residuals to a span's raw log rows."""
    frame = state.frame
    d = frame.dimension
    n_f = state.n_followers
    n_frame = state.n_frame
    rows = res.t_log.shape[0]

    p3 = np.zeros((rows, state.n_active, 3))
    v3 = np.zeros_like(p3)
    p3[:, :, :d] = res.p_log
    v3[:, :, :d] = res.v_log

    errors = np.zeros_like(p3)
    residual = np.zeros(rows)

    _, w_fl, lu, piv = _implicit_entry(cache, frame)
    p_f = res.p_log[:, :n_f, :].reshape(rows, n_f * d)
    p_l = res.p_log[:, n_f:n_frame, :].reshape(rows, (n_frame - n_f) * d)
    pinned = scipy.linalg.lu_solve((lu, piv), w_fl @ p_l.T, check_finite=False)
    errors[:, :n_f, :d] = (p_f + pinned.T).reshape(rows, n_f, d)

    offs = [_flyer_offset(frame, fly.join) for fly in state.flying]
    for r in range(rows):
        sample = maneuver.sample_segment(seg, float(res.t_log[r]))
        targets = maneuver.target_configuration(frame, sample)
        errors[r, n_f:n_frame] = p3[r, n_f:n_frame] - targets[n_f:]
        for k, off_cur in enumerate(offs):
            tgt, _ = _flyer_target(frame, sample, off_cur)
            errors[r, n_frame + k] = p3[r, n_frame + k] - tgt
        cfg = res.p_log[r, :n_frame].reshape(-1)
        residual[r] = laplacian.similarity_residual(frame.laplacian, cfg)

    return SpanLog(
        ids=state.ids,
        roles=state.roles(),
        t=res.t_log.copy(),
        positions=p3,
        velocities=v3,
        errors=errors,
        residual=residual,
    )


def _spawn(state: SimState, join: maneuver.AgentJoin, agent_id: int) -> SimState:
    initial = np.asarray(join.initial, dtype=float).reshape(3)
    if state.frame.dimension == 2 and initial[2] != 0.0:
        raise SimulationError(
            f"joining agent {agent_id} spawns off-plane (z={initial[2]}) in a planar run"
        )
    return SimState(
        t=state.t,
        schedule=state.schedule,
        frame=state.frame,
        positions=np.vstack([state.positions, initial]),
        velocities=np.vstack([state.velocities, np.zeros(3)]),
        ids=state.ids + (agent_id,),
        flying=state.flying + (FlyingAgent(join=join, agent_id=agent_id),),
        mode=state.mode,
    )


def _process_events(
    state: SimState,
    t_evt: float,
    join_ids: dict,
    events: list,
    frames: list,
    seed: int,
) -> SimState:
    """Apply all point events scheduled at one instant, in a fixed order:
    axis switches rebase the frame first, completed joins grow it next, and
    spawns append new flyers last so they start under the final frame."""
    schedule = state.schedule
    for sw in schedule.switches:
        if abs(sw.t - t_evt) > _TIME_TOL:
            continue
        old_seg = next(
            s for s in schedule.segments if abs(s.t_end - sw.t) <= _TIME_TOL
        )
        sample = maneuver.sample_segment(old_seg, sw.t)
        targets = maneuver.target_configuration(state.frame, sample)
        old_axis = tuple(state.frame.axis.vec)
        new_frame = maneuver.apply_axis_switch(
            state.frame, targets, sw.new_axis, seed=seed, sample=sample
        )
        state = replace(state, frame=new_frame)
        frames.append((t_evt, new_frame))
        events.append(
            SwitchRecord(
                t=t_evt,
                old_axis=old_axis,
                new_axis=tuple(new_frame.axis.vec),
                rcond=new_frame.laplacian.rcond,
                retries=new_frame.laplacian.retries,
            )
        )
    for jn in schedule.joins:
        if abs(jn.t_join - t_evt) > _TIME_TOL:
            continue
        fly = next((f for f in state.flying if f.join == jn), None)
        gap = 0.0
        if fly is not None:
            sample = maneuver.evaluate(schedule, state.t)
            tgt, _ = _flyer_target(state.frame, sample, _flyer_offset(state.frame, jn))
            row = state.n_frame + state.flying.index(fly)
            gap = float(np.max(np.abs(state.positions[row] - tgt)))
        state = process_agent_join(state, jn, seed=seed)
        frames.append((t_evt, state.frame))
        events.append(
            JoinRecord(
                t=t_evt,
                agent_id=join_ids[jn],
                fly_gap=gap,
                rcond=state.frame.laplacian.rcond,
                retries=state.frame.laplacian.retries,
            )
        )
    for jn in schedule.joins:
        if abs(jn.t_start - t_evt) > _TIME_TOL:
            continue
        state = _spawn(state, jn, join_ids[jn])
        events.append(SpawnRecord(t=t_evt, agent_id=join_ids[jn]))
    return state


def _breakpoints(schedule: maneuver.ManeuverSchedule) -> list:
    pts = sorted(
        t for t in _event_times(schedule)
        if schedule.t_start - _TIME_TOL <= t <= schedule.t_end + _TIME_TOL
    )
    merged = [schedule.t_start]
    for t in pts:
        if t > merged[-1] + _TIME_TOL:
            merged.append(t)
    if merged[-1] < schedule.t_end - _TIME_TOL:
        merged.append(schedule.t_end)
    else:
        merged[-1] = schedule.t_end
    return merged


def simulate(
    formation,
    axis,
    schedule: maneuver.ManeuverSchedule,
    initial_positions=None,
    alpha: float = 1.0,
    dt: float = 1e-3,
    mode: str = "implicit",
    integrator: str = "rk4",
    seed: int = 0,
    stride: int = 20,
    backend: str | None = None,
) -> SimResult:
    """Run one scenario from schedule start to horizon end.

    Slices the run into spans at every segment boundary and event time,
    integrates each span with the selected backend, processes events between
    spans, and logs every ``stride``-th global step plus each span's final
    state. The first logged row is the initial state at t0 with zero
    velocity. Joining agents get ids above the design roster, assigned in
    spawn order.
    """
    gains = ControlGains(alpha)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    stride = int(stride)

    if not isinstance(axis, RotationAxis):
        axis = RotationAxis(axis)
    frame = maneuver.build_frame(formation, axis, seed=seed)
    if initial_positions is None:
        pos0 = formation.positions.copy()
    else:
        pos0 = np.asarray(initial_positions, dtype=float)
        if pos0.shape != (formation.n, 3):
            raise SimulationError(
                f"initial positions must be ({formation.n}, 3), got {pos0.shape}"
            )
        if not np.all(np.isfinite(pos0)):
            raise SimulationError("initial positions must be finite")
        if formation.dimension == 2 and np.any(pos0[:, 2] != 0.0):
            raise SimulationError("planar runs need z == 0 initial positions")

    state = SimState(
        t=schedule.t_start,
        schedule=schedule,
        frame=frame,
        positions=pos0,
        velocities=np.zeros((formation.n, 3)),
        ids=tuple(range(1, formation.n + 1)),
        flying=(),
        mode=mode,
    )

    ordered_joins = sorted(schedule.joins, key=lambda j: (j.t_start, j.t_join))
    join_ids = {jn: formation.n + 1 + k for k, jn in enumerate(ordered_joins)}

    frames = [(state.t, frame)]
    events: list = []
    spans: list = []
    cache: dict = {}
    breaks = _breakpoints(schedule)
    step_counter = 0

    for k in range(len(breaks) - 1):
        t_a, t_b = breaks[k], breaks[k + 1]
        state = _process_events(state, t_a, join_ids, events, frames, seed)
        if k == 0:
            spans.append(_state_row_log(state))
        seg = schedule.segment_at(t_a)
        prob = _pack_span(
            state,
            gains,
            integrator,
            t_to=t_b,
            dt=dt,
            stride=stride,
            step0=step_counter,
            cache=cache,
        )
        res = backend_mod.integrate_span(prob, backend=backend)
        step_counter = res.step_final
        spans.append(_span_log(state, seg, res, cache))
        state = replace(
            state,
            t=t_b,
            positions=_pad3(res.p_final),
            velocities=_pad3(res.v_final),
        )
    state = _process_events(state, breaks[-1], join_ids, events, frames, seed)

    manifest = {
        "version": _version(),
        "seed": int(seed),
        "mode": mode,
        "integrator": integrator,
        "alpha": float(alpha),
        "dt": float(dt),
        "stride": stride,
        "backend": backend if backend is not None else backend_mod.default_backend(),
        "dimension": int(formation.dimension),
        "design_agents": int(formation.n),
        "steps": int(step_counter),
        "samples": int(sum(span.t.shape[0] for span in spans)),
        "frames": [
            {
                "t": float(t),
                "axis": [float(x) for x in frm.axis.vec],
                "agents": int(frm.formation.n),
                "rcond": float(frm.laplacian.rcond),
                "retries": int(frm.laplacian.retries),
            }
            for t, frm in frames
        ],
        "events": [_event_dict(evt) for evt in events],
    }

    return SimResult(
        spans=tuple(spans),
        events=tuple(events),
        frames=tuple(frames),
        state=state,
        manifest=manifest,
    )


def _event_dict(evt) -> dict:
    if isinstance(evt, SwitchRecord):
        return {
            "type": "axis_switch",
            "t": float(evt.t),
            "old_axis": [float(x) for x in evt.old_axis],
            "new_axis": [float(x) for x in evt.new_axis],
            "rcond": float(evt.rcond),
            "retries": int(evt.retries),
        }
    if isinstance(evt, SpawnRecord):
        return {"type": "agent_spawn", "t": float(evt.t), "agent": int(evt.agent_id)}
    if isinstance(evt, JoinRecord):
        return {
            "type": "agent_join",
            "t": float(evt.t),
            "agent": int(evt.agent_id),
            "fly_gap": float(evt.fly_gap),
            "rcond": float(evt.rcond),
            "retries": int(evt.retries),
        }
    raise TypeError(f"unknown event record {type(evt).__name__}")


def _version() -> str:
    from formlab import __version__

    return __version__
