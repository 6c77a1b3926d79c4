"""Maneuver schedules: piecewise transform profiles and frame bookkeeping.

A schedule describes how the whole formation should move as one body: a
translation track, a uniform scale track, and a rotation-angle track about a
fixed axis, each given per segment with closed-form derivatives. Axis changes
and agent joins are point events between (or inside) segments. A frame pins
the nominal geometry those transforms act on; axis changes re-base the frame
on the current target so the new axis gets a consistent weight matrix.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from formlab import laplacian
from formlab.errors import FormationError, SimulationError
from formlab.geometry import RotationAxis, rodrigues, skew
from formlab.graph import Formation, InteractionGraph, centroid, validate_leader_axis

PROFILE_KINDS = ("constant", "linear", "smoothstep")

_CONTINUITY_TOL = 1e-12
_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class Profile:
    """One interpolation track over a segment, with a closed-form rate.

    ``constant`` holds ``start`` (``end`` must equal it), ``linear`` ramps at
    a fixed rate, and ``smoothstep`` uses the cubic 3s^2 - 2s^3 easing whose
    rate vanishes at both ends. Values may be scalars or 3-vectors.
    """

    kind: str
    start: float | np.ndarray
    end: float | np.ndarray

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "constant" and np.any(np.asarray(self.start) != np.asarray(self.end)):
            raise ValueError("constant profiles must have start == end")

    def sample(self, s: float, duration: float) -> tuple:
        """Value and time-rate at normalized position s in [0, 1]."""
        start = np.asarray(self.start, dtype=float)
        end = np.asarray(self.end, dtype=float)
        if self.kind == "constant":
            return start, np.zeros_like(start)
        if self.kind == "linear":
            w, dw = s, 1.0
        else:
            w, dw = s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s)
        return start + (end - start) * w, (end - start) * (dw / duration)


def constant(value) -> Profile:
    return Profile("constant", np.asarray(value, dtype=float), np.asarray(value, dtype=float))


@dataclass(frozen=True)
class ManeuverSegment:
    """One contiguous span of the schedule with its own transform tracks."""

    t_start: float
    t_end: float
    axis: RotationAxis
    translation: Profile
    scale: Profile
    angle: Profile

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(
                f"segment must have t_end > t_start, got [{self.t_start}, {self.t_end}]"
            )
        lo = min(float(np.min(np.asarray(self.scale.start))), float(np.min(np.asarray(self.scale.end))))
        if lo <= 0.0:
            raise ValueError(f"scale must stay positive, profile reaches {lo}")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class TransformSample:
    """Snapshot of the commanded transform and its rates at one instant."""

    t: float
    translation: np.ndarray
    translation_rate: np.ndarray
    scale: float
    scale_rate: float
    angle: float
    angle_rate: float
    axis: RotationAxis
    rotation: np.ndarray
    rotation_rate: np.ndarray


@dataclass(frozen=True)
class AxisSwitch:
    """Point event: re-base the frame and continue about a new axis."""

    t: float
    new_axis: RotationAxis


@dataclass(frozen=True)
class AgentJoin:
    """Point event pair: an agent spawns, flies in, and becomes a follower.

    ``offset`` is the agent's joining position expressed as a displacement
    from the maneuver center in design-time coordinates; the fly-in target
    co-translates, co-rotates, and co-scales with the formation from
    ``t_start`` until the matrix is rebuilt at ``t_join``. ``initial`` is the
    world position where the agent first appears, and ``neighbors`` names the
    design-order agents the newcomer will sense.
    """

    t_start: float
    t_join: float
    initial: tuple
    offset: tuple
    neighbors: tuple


@dataclass(frozen=True)
class ManeuverSchedule:
    """Ordered segments covering a horizon, plus point events within it."""

    segments: tuple
    switches: tuple = ()
    joins: tuple = ()

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise ValueError("schedule needs at least one segment")
        switch_times = [sw.t for sw in self.switches]
        for a, b in zip(segs, segs[1:]):
            if abs(b.t_start - a.t_end) > _BOUNDARY_TOL:
                raise ValueError(
                    f"segments must be contiguous: gap between t={a.t_end} and t={b.t_start}"
                )
            if any(abs(sw - a.t_end) <= _BOUNDARY_TOL for sw in switch_times):
                # Profiles restart from the identity transform after a switch.
                self._require_identity_start(b)
            else:
                self._require_continuity(a, b)
                if b.axis != a.axis:
                    raise ValueError(
                        f"axis changes require a switch event at t={b.t_start}"
                    )
        for sw in self.switches:
            if not any(abs(seg.t_end - sw.t) <= _BOUNDARY_TOL for seg in segs[:-1]):
                raise ValueError(
                    f"axis switch at t={sw.t} must land on an interior segment boundary"
                )
        for jn in self.joins:
            if not (self.t_start <= jn.t_start < jn.t_join <= self.t_end):
                raise ValueError(
                    f"join window [{jn.t_start}, {jn.t_join}] must sit inside the horizon"
                )
        object.__setattr__(self, "_starts", [seg.t_start for seg in segs])

    @staticmethod
    def _require_continuity(a: ManeuverSegment, b: ManeuverSegment) -> None:
        dur = a.duration
        for name in ("translation", "scale", "angle"):
            end_val, _ = getattr(a, name).sample(1.0, dur)
            start_val, _ = getattr(b, name).sample(0.0, b.duration)
            if np.max(np.abs(np.asarray(end_val) - np.asarray(start_val))) > _CONTINUITY_TOL:
                raise ValueError(
                    f"{name} profile is discontinuous at t={b.t_start}: "
                    f"{end_val} -> {start_val}"
                )

    @staticmethod
    def _require_identity_start(seg: ManeuverSegment) -> None:
        t0, _ = seg.translation.sample(0.0, seg.duration)
        k0, _ = seg.scale.sample(0.0, seg.duration)
        a0, _ = seg.angle.sample(0.0, seg.duration)
        if (
            np.max(np.abs(np.asarray(t0))) > _CONTINUITY_TOL
            or abs(float(k0) - 1.0) > _CONTINUITY_TOL
            or abs(float(a0)) > _CONTINUITY_TOL
        ):
            raise ValueError(
                f"segment starting at t={seg.t_start} follows an axis switch and must "
                "start from the identity transform (zero translation, unit scale, zero angle)"
            )

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    def segment_at(self, t: float) -> ManeuverSegment:
        if not (self.t_start <= t <= self.t_end):
            raise SimulationError(
                f"t={t} outside schedule horizon [{self.t_start}, {self.t_end}]"
            )
        idx = bisect.bisect_right(self._starts, t) - 1
        return self.segments[max(idx, 0)]

    def boundaries(self) -> tuple[float, ...]:
        return tuple(seg.t_start for seg in self.segments) + (self.t_end,)


def sample_segment(seg: ManeuverSegment, t: float) -> TransformSample:
    """Sample one segment's tracks at time t, clamping s to the segment span.

    Schedules are right-continuous at joints; passing the earlier segment with
    its own t_end gives the left value instead, which is what an axis switch
    needs when re-basing on the outgoing transform.
    """
    s = (t - seg.t_start) / seg.duration
    s = min(max(s, 0.0), 1.0)
    trans, trans_rate = seg.translation.sample(s, seg.duration)
    k, k_rate = seg.scale.sample(s, seg.duration)
    ang, ang_rate = seg.angle.sample(s, seg.duration)
    rot = rodrigues(seg.axis, float(ang))
    rot_rate = float(ang_rate) * (skew(seg.axis) @ rot)
    return TransformSample(
        t=t,
        translation=np.asarray(trans, dtype=float).reshape(3),
        translation_rate=np.asarray(trans_rate, dtype=float).reshape(3),
        scale=float(k),
        scale_rate=float(k_rate),
        angle=float(ang),
        angle_rate=float(ang_rate),
        axis=seg.axis,
        rotation=rot,
        rotation_rate=rot_rate,
    )


def evaluate(schedule: ManeuverSchedule, t: float) -> TransformSample:
    """Sample the commanded transform at time t (right-continuous at joints)."""
    return sample_segment(schedule.segment_at(t), t)


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> offset + scale * rotation @ x, used to chain frame re-basings."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.offset + self.scale * (pts @ self.rotation.T)

    def after(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Composition self o inner (inner acts first)."""
        return SimilarityTransform(
            scale=self.scale * inner.scale,
            rotation=self.rotation @ inner.rotation,
            offset=self.offset + self.scale * (self.rotation @ inner.offset),
        )

    @staticmethod
    def from_sample(sample: TransformSample, center: np.ndarray) -> "SimilarityTransform":
        """The affine map sending frame nominals to targets at ``sample``."""
        rot = sample.rotation
        off = center + sample.translation - sample.scale * (rot @ center)
        return SimilarityTransform(scale=sample.scale, rotation=rot, offset=off)


@dataclass(frozen=True)
class NominalFrame:
    """Nominal geometry, maneuver center, axis, and the matching weight matrix.

    ``base`` maps the original design-time nominal coordinates into this
    frame's nominal coordinates; it starts as the identity and accumulates
    one similarity transform per axis switch.
    """

    formation: Formation
    center: np.ndarray
    axis: RotationAxis
    laplacian: laplacian.AugmentedLaplacian
    base: SimilarityTransform = field(default_factory=SimilarityTransform)

    @property
    def positions(self) -> np.ndarray:
        return self.formation.positions

    @property
    def dimension(self) -> int:
        return self.formation.dimension


def build_frame(formation: Formation, axis: RotationAxis, seed: int = 0) -> NominalFrame:
    """Assemble the weight matrix for a nominal formation and wrap it in a frame."""
    if not validate_leader_axis(formation.leader_positions(), axis):
        raise FormationError(
            "every pairwise leader offset is parallel to the rotation axis; "
            "rotations about it would be invisible to the followers"
        )
    agl = laplacian.assemble(formation, axis, seed=seed)
    return NominalFrame(
        formation=formation,
        center=centroid(formation),
        axis=axis,
        laplacian=agl,
    )


def _check_axis(frame: NominalFrame, sample: TransformSample) -> None:
    if sample.axis != frame.axis:
        raise SimulationError(
            "transform sample uses a different rotation axis than the frame "
            "was assembled for; re-base the frame first"
        )


def target_configuration(frame: NominalFrame, sample: TransformSample) -> np.ndarray:
    """Commanded agent positions: c + T + k R (r - c), shape (n, 3)."""
    _check_axis(frame, sample)
    rel = frame.positions - frame.center
    return frame.center + sample.translation + sample.scale * (rel @ sample.rotation.T)


def target_velocity(frame: NominalFrame, sample: TransformSample) -> np.ndarray:
    """Time derivative of the commanded positions, shape (n, 3)."""
    _check_axis(frame, sample)
    rel = frame.positions - frame.center
    gain = sample.scale_rate * sample.rotation + sample.scale * sample.rotation_rate
    return sample.translation_rate + rel @ gain.T


def apply_agent_join(
    frame: NominalFrame,
    offset_design,
    neighbors,
    seed: int = 0,
) -> NominalFrame:
    """Admit a new follower at a design-frame offset from the maneuver center.

    ``offset_design`` is a displacement in original design coordinates; it is
    carried through the frame's accumulated base transform (rotation and scale
    only, since displacements do not translate) so the insertion point co-moves
    with any re-basings since design time. The newcomer takes index 0 and
    existing agents shift up by one; only the new constraint rows are
    synthesized and the existing weight matrix is embedded untouched, which
    keeps every pre-existing follower's solved position bit-for-bit identical.
    """
    off = np.asarray(offset_design, dtype=float).reshape(3)
    graph = frame.formation.graph
    nbrs = tuple(sorted(int(j) for j in neighbors))
    if any(j < 0 or j >= graph.n for j in nbrs):
        raise FormationError(
            f"join neighbors {nbrs} out of range for {graph.n} agents"
        )
    nu = frame.center + frame.base.scale * (frame.base.rotation @ off)
    positions = np.vstack([nu, frame.positions])
    neighbor_lists = (tuple(j + 1 for j in nbrs),) + tuple(
        tuple(j + 1 for j in row) for row in graph.neighbors
    )
    ext_graph = InteractionGraph(graph.n + 1, graph.n_followers + 1, neighbor_lists)
    ext_formation = Formation(ext_graph, positions, frame.dimension)
    agl = laplacian.insert_leading_follower(frame.laplacian, ext_formation, seed=seed)
    return NominalFrame(
        formation=ext_formation,
        center=frame.center,
        axis=frame.axis,
        laplacian=agl,
        base=frame.base,
    )


def apply_axis_switch(
    frame: NominalFrame,
    p_at_switch: np.ndarray,
    new_axis: RotationAxis,
    seed: int = 0,
    sample: TransformSample | None = None,
) -> NominalFrame:
    """Re-base the frame on the switch-time target and rebuild for a new axis.

    ``p_at_switch`` must be the commanded target configuration at the switch
    instant (not the measured positions): re-basing on the exact target keeps
    the new nominal inside the new matrix kernel to machine precision. When
    the transform ``sample`` at the switch is supplied, the frame's base
    transform is composed so later targets can also be expressed directly in
    terms of the original design nominal.
    """
    pos = np.asarray(p_at_switch, dtype=float)
    if pos.shape != frame.positions.shape:
        raise SimulationError(
            f"switch configuration shape {pos.shape} does not match frame {frame.positions.shape}"
        )
    formation_u = Formation(frame.formation.graph, pos, frame.dimension)
    if not validate_leader_axis(formation_u.leader_positions(), new_axis):
        raise FormationError(
            "axis switch rejected: every pairwise leader offset at the switch "
            "is parallel to the new axis"
        )
    agl_u = laplacian.assemble(formation_u, new_axis, seed=seed)
    base = frame.base
    if sample is not None:
        _check_axis(frame, sample)
        base = SimilarityTransform.from_sample(sample, frame.center).after(frame.base)
    return NominalFrame(
        formation=formation_u,
        center=centroid(formation_u),
        axis=new_axis,
        laplacian=agl_u,
        base=base,
    )
