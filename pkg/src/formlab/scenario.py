"""Scenario documents: parse, validate, emit, and build runtime objects.

A scenario is a JSON object that fully determines a run: the nominal
formation with roles and sensing edges, the rotation axis, the maneuver
segments, point events (axis switches and agent joins), run defaults, and
optional obstacles that exist purely for plotting. Parsing is strict and
collects every problem it can find with a field path, so a bad file is
reported in one shot rather than one error at a time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from formlab import maneuver
from formlab.errors import FormationError, ScenarioError
from formlab.geometry import RotationAxis
from formlab.graph import Formation, InteractionGraph, validate_leader_axis, validate_two_rooted

ROLES = ("follower", "leader")
INTEGRATORS = ("euler", "rk4")
MODES = ("implicit", "causal")

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class AgentSpec:
    id: int
    role: str
    nominal: tuple
    neighbors: tuple
    initial: tuple | None = None


@dataclass(frozen=True)
class TrackSpec:
    """One transform track of a segment in file form. ``start == end`` with
    kind "constant" is the canonical held track."""

    kind: str
    start: object
    end: object


@dataclass(frozen=True)
class SegmentSpec:
    t_start: float
    t_end: float
    translation: TrackSpec
    scale: TrackSpec
    angle: TrackSpec


@dataclass(frozen=True)
class SwitchSpec:
    t: float
    new_axis: tuple


@dataclass(frozen=True)
class JoinSpec:
    t_start: float
    t_join: float
    initial: tuple
    offset: tuple
    neighbors: tuple


@dataclass(frozen=True)
class BoxSpec:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class PolygonSpec:
    vertices: tuple


@dataclass(frozen=True)
class RunDefaults:
    dt: float = 1e-3
    alpha: float = 1.0
    integrator: str = "rk4"
    mode: str = "implicit"
    seed: int = 0
    stride: int = 20


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    dimension: int
    axis: tuple
    agents: tuple
    segments: tuple
    switches: tuple = ()
    joins: tuple = ()
    obstacles: tuple = ()
    defaults: RunDefaults = field(default_factory=RunDefaults)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_followers(self) -> int:
        return sum(1 for a in self.agents if a.role == "follower")


class _Collector:
    """Accumulates (field_path, message) pairs during validation."""

    def __init__(self):
        self.problems = []

    def add(self, path: str, msg: str) -> None:
        self.problems.append((path, msg))

    def raise_if_any(self) -> None:
        if self.problems:
            raise ScenarioError(self.problems)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _vec(raw, length, path, out: _Collector):
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != length
        or not all(_is_num(v) for v in raw)
    ):
        out.add(path, f"expected {length} finite numbers")
        return None
    return tuple(float(v) for v in raw)


def _check_keys(obj: dict, allowed, path, out: _Collector) -> None:
    for key in obj:
        if key not in allowed:
            out.add(f"{path}.{key}" if path else key, "unknown field")


def _parse_track(raw, prev, vector: bool, dim: int, path: str, out: _Collector) -> TrackSpec:
    """One transform track; a missing track holds the previous segment's end."""
    if raw is None:
        return TrackSpec("constant", prev, prev)
    if not isinstance(raw, dict):
        out.add(path, "expected an object")
        return TrackSpec("constant", prev, prev)
    _check_keys(raw, {"kind", "value", "from", "to"}, path, out)
    kind = raw.get("kind")
    if kind not in maneuver.PROFILE_KINDS:
        out.add(f"{path}.kind", f"expected one of {list(maneuver.PROFILE_KINDS)}")
        return TrackSpec("constant", prev, prev)

    def side(key):
        v = raw.get(key)
        if v is None:
            out.add(f"{path}.{key}", "missing")
            return prev
        if vector:
            got = _vec(v, 3, f"{path}.{key}", out)
            if got is None:
                return prev
            if dim == 2 and got[2] != 0.0:
                out.add(f"{path}.{key}", "planar scenarios need z == 0")
            return got
        if not _is_num(v):
            out.add(f"{path}.{key}", "expected a finite number")
            return prev
        return float(v)

    if kind == "constant":
        if "from" in raw or "to" in raw:
            out.add(path, 'constant tracks take "value", not "from"/"to"')
        value = side("value")
        return TrackSpec("constant", value, value)
    if "value" in raw:
        out.add(path, f'{kind} tracks take "from"/"to", not "value"')
    return TrackSpec(kind, side("from"), side("to"))


def _parse_agents(raw, dim: int, out: _Collector):
    agents = []
    if not isinstance(raw, list) or len(raw) < 3:
        out.add("agents", "expected a list of at least 3 agents")
        return ()
    for i, a in enumerate(raw):
        path = f"agents[{i}]"
        if not isinstance(a, dict):
            out.add(path, "expected an object")
            continue
        _check_keys(a, {"id", "role", "nominal", "neighbors", "initial"}, path, out)
        aid = a.get("id")
        if not isinstance(aid, int) or isinstance(aid, bool) or aid < 1:
            out.add(f"{path}.id", "expected a positive integer")
            aid = -1
        role = a.get("role")
        if role not in ROLES:
            out.add(f"{path}.role", f"expected one of {list(ROLES)}")
            role = "follower"
        nominal = _vec(a.get("nominal"), 3, f"{path}.nominal", out)
        if nominal is not None and dim == 2 and nominal[2] != 0.0:
            out.add(f"{path}.nominal", "planar scenarios need z == 0")
        nbrs_raw = a.get("neighbors")
        if not isinstance(nbrs_raw, list) or not all(
            isinstance(j, int) and not isinstance(j, bool) for j in nbrs_raw
        ):
            out.add(f"{path}.neighbors", "expected a list of agent ids")
            nbrs_raw = []
        initial = None
        if a.get("initial") is not None:
            initial = _vec(a["initial"], 3, f"{path}.initial", out)
            if initial is not None and dim == 2 and initial[2] != 0.0:
                out.add(f"{path}.initial", "planar scenarios need z == 0")
        agents.append(
            AgentSpec(
                id=aid,
                role=role,
                nominal=nominal if nominal is not None else (0.0, 0.0, 0.0),
                neighbors=tuple(nbrs_raw),
                initial=initial,
            )
        )

    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        out.add("agents", "agent ids must be unique")
    elif set(ids) != set(range(1, len(agents) + 1)):
        out.add("agents", f"agent ids must cover 1..{len(agents)} exactly")
    else:
        agents.sort(key=lambda a: a.id)
        first_leader = next(
            (k for k, a in enumerate(agents) if a.role == "leader"), len(agents)
        )
        if any(a.role == "follower" for a in agents[first_leader:]):
            out.add("agents", "followers must occupy the low ids, leaders the high ids")
        n_leaders = sum(1 for a in agents if a.role == "leader")
        if n_leaders < 2:
            out.add("agents", f"need at least 2 leaders, got {n_leaders}")
        elif n_leaders > 2:
            warnings.warn(
                f"scenario declares {n_leaders} leaders; two suffice to steer "
                "a maneuver and extras only add constraints",
                stacklevel=3,
            )
        for k, a in enumerate(agents):
            path = f"agents[{k}].neighbors"
            seen = set()
            for j in a.neighbors:
                if j == a.id:
                    out.add(path, "an agent cannot sense itself")
                elif j < 1 or j > len(agents):
                    out.add(path, f"neighbor id {j} does not exist")
                elif j in seen:
                    out.add(path, f"neighbor id {j} repeats")
                seen.add(j)
            if a.role == "follower" and len(a.neighbors) < 2:
                out.add(path, "followers need at least 2 neighbors")
    return tuple(agents)


def _parse_segments(raw, dim: int, out: _Collector):
    if not isinstance(raw, list) or not raw:
        out.add("segments", "expected a non-empty list")
        return ()
    segments = []
    prev = {"translation": (0.0, 0.0, 0.0), "scale": 1.0, "angle": 0.0}
    for i, s in enumerate(raw):
        path = f"segments[{i}]"
        if not isinstance(s, dict):
            out.add(path, "expected an object")
            continue
        _check_keys(
            s, {"t_start", "t_end", "translation", "scale", "angle"}, path, out
        )
        t0 = s.get("t_start")
        t1 = s.get("t_end")
        if not _is_num(t0) or not _is_num(t1) or not t1 > t0:
            out.add(path, "needs numeric t_start < t_end")
            t0, t1 = float(i), float(i + 1)
        tracks = {}
        for name, vector in (("translation", True), ("scale", False), ("angle", False)):
            tracks[name] = _parse_track(
                s.get(name), prev[name], vector, dim, f"{path}.{name}", out
            )
            prev[name] = tracks[name].end
        lo = min(tracks["scale"].start, tracks["scale"].end)
        if lo <= 0.0:
            out.add(f"{path}.scale", f"scale must stay positive, reaches {lo}")
        segments.append(
            SegmentSpec(
                t_start=float(t0),
                t_end=float(t1),
                translation=tracks["translation"],
                scale=tracks["scale"],
                angle=tracks["angle"],
            )
        )
    return tuple(segments)


def _parse_events(raw, dim: int, n_agents: int, out: _Collector):
    switches, joins = [], []
    if raw is None:
        return (), ()
    if not isinstance(raw, list):
        out.add("events", "expected a list")
        return (), ()
    for i, e in enumerate(raw):
        path = f"events[{i}]"
        if not isinstance(e, dict):
            out.add(path, "expected an object")
            continue
        etype = e.get("type")
        if etype == "axis_switch":
            _check_keys(e, {"type", "t", "new_axis"}, path, out)
            if dim == 2:
                out.add(path, "planar scenarios cannot switch the rotation axis")
                continue
            t = e.get("t")
            if not _is_num(t):
                out.add(f"{path}.t", "expected a finite number")
                continue
            ax = _vec(e.get("new_axis"), 3, f"{path}.new_axis", out)
            if ax is None:
                continue
            if float(np.linalg.norm(ax)) < 1e-12:
                out.add(f"{path}.new_axis", "axis must be nonzero")
                continue
            switches.append(SwitchSpec(t=float(t), new_axis=ax))
        elif etype == "agent_join":
            _check_keys(
                e, {"type", "t_start", "t_join", "initial", "offset", "neighbors"},
                path, out,
            )
            t0, t1 = e.get("t_start"), e.get("t_join")
            if not _is_num(t0) or not _is_num(t1) or not t1 > t0:
                out.add(path, "needs numeric t_start < t_join")
                continue
            initial = _vec(e.get("initial"), 3, f"{path}.initial", out)
            offset = _vec(e.get("offset"), 3, f"{path}.offset", out)
            if initial is None or offset is None:
                continue
            if dim == 2 and (initial[2] != 0.0 or offset[2] != 0.0):
                out.add(path, "planar scenarios need z == 0 join geometry")
            nbrs = e.get("neighbors")
            if (
                not isinstance(nbrs, list)
                or len(nbrs) < 2
                or not all(isinstance(j, int) and not isinstance(j, bool) for j in nbrs)
            ):
                out.add(f"{path}.neighbors", "expected at least 2 agent ids")
                continue
            bad = [j for j in nbrs if j < 1 or j > n_agents]
            if bad:
                out.add(f"{path}.neighbors", f"ids {bad} do not exist")
                continue
            joins.append(
                JoinSpec(
                    t_start=float(t0),
                    t_join=float(t1),
                    initial=initial,
                    offset=offset,
                    neighbors=tuple(nbrs),
                )
            )
        else:
            out.add(f"{path}.type", 'expected "axis_switch" or "agent_join"')
    return tuple(switches), tuple(joins)


def _parse_obstacles(raw, dim: int, out: _Collector):
    if raw is None:
        return ()
    if not isinstance(raw, list):
        out.add("obstacles", "expected a list")
        return ()
    shapes = []
    for i, o in enumerate(raw):
        path = f"obstacles[{i}]"
        if not isinstance(o, dict):
            out.add(path, "expected an object")
            continue
        kind = o.get("kind")
        if kind == "box":
            _check_keys(o, {"kind", "min", "max"}, path, out)
            lo = _vec(o.get("min"), dim, f"{path}.min", out)
            hi = _vec(o.get("max"), dim, f"{path}.max", out)
            if lo is None or hi is None:
                continue
            if any(h <= l for l, h in zip(lo, hi)):
                out.add(path, "max must exceed min on every axis")
                continue
            shapes.append(BoxSpec(lo=lo, hi=hi))
        elif kind == "polygon":
            _check_keys(o, {"kind", "vertices"}, path, out)
            if dim != 2:
                out.add(path, "polygon obstacles are for planar scenarios; use a box")
                continue
            verts = o.get("vertices")
            if not isinstance(verts, list) or len(verts) < 3:
                out.add(f"{path}.vertices", "expected at least 3 vertices")
                continue
            clean = []
            for k, v in enumerate(verts):
                got = _vec(v, 2, f"{path}.vertices[{k}]", out)
                if got is not None:
                    clean.append(got)
            if len(clean) == len(verts):
                shapes.append(PolygonSpec(vertices=tuple(clean)))
        else:
            out.add(f"{path}.kind", 'expected "box" or "polygon"')
    return tuple(shapes)


def _parse_defaults(raw, out: _Collector) -> RunDefaults:
    if raw is None:
        return RunDefaults()
    if not isinstance(raw, dict):
        out.add("defaults", "expected an object")
        return RunDefaults()
    _check_keys(
        raw, {"dt", "alpha", "integrator", "mode", "seed", "stride"}, "defaults", out
    )
    base = RunDefaults()
    dt = raw.get("dt", base.dt)
    if not _is_num(dt) or dt <= 0:
        out.add("defaults.dt", "expected a positive number")
        dt = base.dt
    alpha = raw.get("alpha", base.alpha)
    if not _is_num(alpha) or alpha <= 0:
        out.add("defaults.alpha", "expected a positive number")
        alpha = base.alpha
    integrator = raw.get("integrator", base.integrator)
    if integrator not in INTEGRATORS:
        out.add("defaults.integrator", f"expected one of {list(INTEGRATORS)}")
        integrator = base.integrator
    mode = raw.get("mode", base.mode)
    if mode not in MODES:
        out.add("defaults.mode", f"expected one of {list(MODES)}")
        mode = base.mode
    seed = raw.get("seed", base.seed)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        out.add("defaults.seed", "expected a non-negative integer")
        seed = base.seed
    stride = raw.get("stride", base.stride)
    if not isinstance(stride, int) or isinstance(stride, bool) or stride < 1:
        out.add("defaults.stride", "expected a positive integer")
        stride = base.stride
    return RunDefaults(
        dt=float(dt), alpha=float(alpha), integrator=integrator,
        mode=mode, seed=seed, stride=stride,
    )


def parse_scenario(text: str) -> ScenarioFile:
    """Parse and fully validate a scenario document.

    Raises ScenarioError carrying every (field_path, message) pair found;
    semantic checks (graph rootedness, leader/axis geometry, schedule
    continuity) run only once the structural fields they depend on are clean.
    """
    out = _Collector()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([("$", f"not valid JSON: {exc}")]) from exc
    if not isinstance(doc, dict):
        raise ScenarioError([("$", "expected a JSON object")])

    _check_keys(
        doc,
        {"name", "dimension", "axis", "agents", "segments", "events", "defaults", "obstacles"},
        "",
        out,
    )
    name = doc.get("name")
    if not isinstance(name, str) or not name.strip():
        out.add("name", "expected a non-empty string")
        name = "unnamed"
    dim = doc.get("dimension")
    if dim not in (2, 3):
        out.add("dimension", "expected 2 or 3")
        dim = 3

    axis_raw = _vec(doc.get("axis"), 3, "axis", out)
    axis = axis_raw if axis_raw is not None else (0.0, 0.0, 1.0)
    if axis_raw is not None:
        norm = float(np.linalg.norm(axis_raw))
        if norm < 1e-12:
            out.add("axis", "axis must be nonzero")
        elif dim == 2 and (axis_raw[0] != 0.0 or axis_raw[1] != 0.0 or axis_raw[2] <= 0.0):
            out.add("axis", "planar scenarios rotate about +z only")

    agents = _parse_agents(doc.get("agents"), dim, out)
    segments = _parse_segments(doc.get("segments"), dim, out)
    switches, joins = _parse_events(doc.get("events"), dim, len(agents), out)
    obstacles = _parse_obstacles(doc.get("obstacles"), dim, out)
    defaults = _parse_defaults(doc.get("defaults"), out)

    scenario = ScenarioFile(
        name=name,
        dimension=dim,
        axis=axis,
        agents=agents,
        segments=segments,
        switches=switches,
        joins=joins,
        obstacles=obstacles,
        defaults=defaults,
    )

    if not out.problems:
        formation = None
        try:
            formation = build_formation(scenario)
        except FormationError as exc:
            out.add("agents", str(exc))
        if formation is not None:
            n_f = formation.n_followers
            if not validate_two_rooted(formation.graph, (n_f, n_f + 1)):
                out.add(
                    "agents",
                    "the sensing graph is not 2-rooted from the leader pair; "
                    "some agent loses the leaders after one failure",
                )
            if not validate_leader_axis(
                formation.leader_positions(), RotationAxis(scenario.axis)
            ):
                out.add(
                    "axis",
                    "every pairwise leader offset is parallel to the rotation "
                    "axis, so rotations would be invisible to the followers",
                )
        try:
            build_schedule(scenario)
        except (ValueError, FormationError) as exc:
            out.add("schedule", str(exc))

    out.raise_if_any()
    return scenario


def load_scenario(path) -> ScenarioFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _track_dict(track: TrackSpec) -> dict:
    def plain(v):
        return list(v) if isinstance(v, tuple) else v

    if track.kind == "constant":
        return {"kind": "constant", "value": plain(track.start)}
    return {"kind": track.kind, "from": plain(track.start), "to": plain(track.end)}


def emit_scenario(scenario: ScenarioFile) -> str:
    """Serialize back to the canonical JSON document form."""
    doc = {
        "name": scenario.name,
        "dimension": scenario.dimension,
        "axis": list(scenario.axis),
        "agents": [],
        "segments": [],
    }
    for a in scenario.agents:
        entry = {
            "id": a.id,
            "role": a.role,
            "nominal": list(a.nominal),
            "neighbors": list(a.neighbors),
        }
        if a.initial is not None:
            entry["initial"] = list(a.initial)
        doc["agents"].append(entry)
    for s in scenario.segments:
        doc["segments"].append(
            {
                "t_start": s.t_start,
                "t_end": s.t_end,
                "translation": _track_dict(s.translation),
                "scale": _track_dict(s.scale),
                "angle": _track_dict(s.angle),
            }
        )
    events = []
    for sw in scenario.switches:
        events.append({"type": "axis_switch", "t": sw.t, "new_axis": list(sw.new_axis)})
    for jn in scenario.joins:
        events.append(
            {
                "type": "agent_join",
                "t_start": jn.t_start,
                "t_join": jn.t_join,
                "initial": list(jn.initial),
                "offset": list(jn.offset),
                "neighbors": list(jn.neighbors),
            }
        )
    if events:
        events.sort(key=lambda e: e.get("t", e.get("t_start")))
        doc["events"] = events
    if scenario.obstacles:
        doc["obstacles"] = [
            {"kind": "box", "min": list(o.lo), "max": list(o.hi)}
            if isinstance(o, BoxSpec)
            else {"kind": "polygon", "vertices": [list(v) for v in o.vertices]}
            for o in scenario.obstacles
        ]
    doc["defaults"] = {
        "dt": scenario.defaults.dt,
        "alpha": scenario.defaults.alpha,
        "integrator": scenario.defaults.integrator,
        "mode": scenario.defaults.mode,
        "seed": scenario.defaults.seed,
        "stride": scenario.defaults.stride,
    }
    return json.dumps(doc, indent=2) + "\n"


def build_formation(scenario: ScenarioFile) -> Formation:
    """The nominal formation with 0-based, followers-first indexing."""
    n_f = scenario.n_followers
    graph = InteractionGraph(
        n=scenario.n_agents,
        n_followers=n_f,
        neighbors=[tuple(j - 1 for j in a.neighbors) for a in scenario.agents],
    )
    positions = np.array([a.nominal for a in scenario.agents], dtype=float)
    return Formation(graph, positions, scenario.dimension)


def build_schedule(scenario: ScenarioFile) -> maneuver.ManeuverSchedule:
    """Maneuver schedule with per-segment axes resolved from the switches."""
    switches = sorted(scenario.switches, key=lambda sw: sw.t)
    current = RotationAxis(scenario.axis)
    pending = list(switches)
    segments = []
    for s in scenario.segments:
        while pending and pending[0].t <= s.t_start + _TIME_TOL:
            current = RotationAxis(pending.pop(0).new_axis)
        segments.append(
            maneuver.ManeuverSegment(
                t_start=s.t_start,
                t_end=s.t_end,
                axis=current,
                translation=maneuver.Profile(
                    s.translation.kind,
                    np.asarray(s.translation.start, dtype=float),
                    np.asarray(s.translation.end, dtype=float),
                ),
                scale=maneuver.Profile(s.scale.kind, s.scale.start, s.scale.end),
                angle=maneuver.Profile(s.angle.kind, s.angle.start, s.angle.end),
            )
        )
    return maneuver.ManeuverSchedule(
        segments=tuple(segments),
        switches=tuple(
            maneuver.AxisSwitch(t=sw.t, new_axis=RotationAxis(sw.new_axis))
            for sw in switches
        ),
        joins=tuple(
            maneuver.AgentJoin(
                t_start=jn.t_start,
                t_join=jn.t_join,
                initial=jn.initial,
                offset=jn.offset,
                neighbors=jn.neighbors,
            )
            for jn in scenario.joins
        ),
    )


def initial_positions(scenario: ScenarioFile) -> np.ndarray | None:
    """Authored starting positions, or None when every agent starts nominal."""
    if all(a.initial is None for a in scenario.agents):
        return None
    return np.array(
        [a.initial if a.initial is not None else a.nominal for a in scenario.agents],
        dtype=float,
    )


def packaged_scenarios() -> tuple:
    """Names of the scenario fixtures shipped inside the package."""
    root = resources.files("formlab") / "scenarios"
    return tuple(sorted(p.name for p in root.iterdir() if p.name.endswith(".json")))


def load_packaged(name: str) -> ScenarioFile:
    root = resources.files("formlab") / "scenarios"
    target = root / name
    if not target.is_file():
        raise ScenarioError(
            [("$", f"no packaged scenario named {name!r}; have {list(packaged_scenarios())}")]
        )
    return parse_scenario(target.read_text(encoding="utf-8"))
