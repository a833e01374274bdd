"""Scenario description, YAML loading/validation and serialization.

A scenario file is one YAML document. Only ``seed``, ``grid.rows``,
``grid.cols`` and ``nodes.count`` (or ``nodes.positions``) are required;
see ``DEFAULTS`` and the README for the rest.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from gridsurv.bandwidth import FlowRequest
from gridsurv.clustering import ElectionWeights
from gridsurv.errors import ConfigError, DomainError
from gridsurv.world import GridConfig, NodeId

DEFAULTS: dict[str, Any] = {
    "name": "",
    "grid.width": 1000.0,
    "grid.height": 1000.0,
    "nodes.radio_range": 250.0,
    "nodes.speed": (0.0, 5.0),
    "nodes.battery": (0.5, 1.0),
    "nodes.computation": (0.5, 1.0),
    "weights": (1.0, 1.0, 1.0, 1.0, 0.0),
    "link_capacity": 10.0,
    "election_period": 50.0,
    "maintenance_tick": 1.0,
    "mobility_interval": 1.0,
    "overload_threshold": 8,
    "battery_drain": 1e-5,
    "ch_drain_factor": 10.0,
    "duration": "latest event time",
    "debug": False,
}


class EventKind(enum.Enum):
    MOBILITY_EPOCH = "mobility_epoch"
    NODE_CRASH = "node_crash"
    LINK_CUT = "link_cut"
    INTRUDER_SEIZURE = "intruder_seizure"
    ELECTION_PERIOD_BOUNDARY = "election_period_boundary"
    MAINTENANCE_TICK = "maintenance_tick"
    FLOW_DEPARTURE = "flow_departure"
    FLOW_ARRIVAL = "flow_arrival"

    @property
    def priority(self) -> int:
        return _PRIORITY[self]

    @property
    def is_fault(self) -> bool:
        return self in (EventKind.NODE_CRASH, EventKind.LINK_CUT, EventKind.INTRUDER_SEIZURE)


# within one timestamp: move, break things, then maintain, then serve flows
_PRIORITY = {k: i for i, k in enumerate(EventKind)}


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    kind: EventKind
    flow: FlowRequest | None = None
    flow_id: str | None = None
    node: NodeId | None = None
    peer: NodeId | None = None
    seized: float | None = None

    def sort_key(self, index: int) -> tuple[float, int, int]:
        return (self.time, self.kind.priority, index)


@dataclass(frozen=True)
class NodeSpec:
    count: int
    radio_range: float = 250.0
    speed_range: tuple[float, float] = (0.0, 5.0)
    battery_range: tuple[float, float] = (0.5, 1.0)
    computation_range: tuple[float, float] = (0.5, 1.0)
    positions: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True)
class Scenario:
    grid: GridConfig
    nodes: NodeSpec
    seed: int
    weights: ElectionWeights = field(default_factory=lambda: ElectionWeights())
    link_capacity: float = 10.0
    election_period: float = 50.0
    maintenance_tick: float = 1.0
    mobility_interval: float = 1.0
    overload_threshold: int = 8
    battery_drain: float = 1e-5
    ch_drain_factor: float = 10.0
    duration: float | None = None
    events: tuple[ScenarioEvent, ...] = ()
    name: str = ""
    debug: bool = False

    @property
    def end_time(self) -> float:
        if self.duration is not None:
            return self.duration
        return max((e.time for e in self.events), default=0.0)


_FLOW_ID = re.compile(r"^[A-Za-z0-9_.:-]+$")


class _Reader:
    """Pulls typed values out of the parsed YAML while collecting problems."""

    def __init__(self, data, lines: dict[tuple, int]):
        self.data = data
        self.lines = lines
        self.problems: list[tuple[str, int | None, str]] = []

    def line(self, path: tuple) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None

    def error(self, path: tuple, msg: str) -> None:
        key = ".".join(str(p) for p in path)
        self.problems.append((key, self.line(path), msg))

    def lookup(self, path: tuple):
        cur = self.data
        for p in path:
            if isinstance(cur, dict) and p in cur:
                cur = cur[p]
            elif isinstance(cur, list) and isinstance(p, int) and p < len(cur):
                cur = cur[p]
            else:
                return _MISSING
        return cur

    def get(self, path: tuple, kind: str, default=None, required=False, check=None, why=""):
        value = self.lookup(path)
        if value is _MISSING or value is None:
            if required:
                self.error(path, "required key is missing")
            return default
        value = self._coerce(path, value, kind)
        if value is _MISSING:
            return default
        if check is not None and not check(value):
            self.error(path, f"value {value!r} violates constraint: {why}")
            return default
        return value

    def _coerce(self, path, value, kind):
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                self.error(path, f"expected an integer, got {type(value).__name__}")
                return _MISSING
            return value
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.error(path, f"expected a number, got {type(value).__name__}")
                return _MISSING
            return float(value)
        if kind == "str":
            if not isinstance(value, (str, int)) or isinstance(value, bool):
                self.error(path, f"expected a string, got {type(value).__name__}")
                return _MISSING
            return str(value)
        if kind == "bool":
            if not isinstance(value, bool):
                self.error(path, f"expected true/false, got {type(value).__name__}")
                return _MISSING
            return value
        if kind == "pair":
            ok = (
                isinstance(value, list)
                and len(value) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
            )
            if not ok:
                self.error(path, "expected a two-element list of numbers")
                return _MISSING
            return (float(value[0]), float(value[1]))
        raise AssertionError(kind)

    def only_keys(self, path: tuple, allowed: set[str]) -> None:
        value = self.lookup(path) if path else self.data
        if not isinstance(value, dict):
            return
        for k in value:
            if k not in allowed:
                self.error(path + (k,), "unknown key")


class _Missing:
    pass


_MISSING = _Missing()


def _line_map(text: str) -> dict[tuple, int]:
    lines: dict[tuple, int] = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                lines[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                key = path + (i,)
                lines[key] = v.start_mark.line + 1
                walk(v, key)

    if root is not None:
        walk(root, ())
    return lines


_EVENT_KEYS = {
    EventKind.MOBILITY_EPOCH: set(),
    EventKind.MAINTENANCE_TICK: set(),
    EventKind.ELECTION_PERIOD_BOUNDARY: set(),
    EventKind.FLOW_ARRIVAL: {"flow", "src", "dst", "demand", "duration"},
    EventKind.FLOW_DEPARTURE: {"flow"},
    EventKind.NODE_CRASH: {"node"},
    EventKind.LINK_CUT: {"nodes"},
    EventKind.INTRUDER_SEIZURE: {"node", "seized"},
}

_TOP_KEYS = {
    "name", "seed", "duration", "grid", "nodes", "weights", "link_capacity",
    "election_period", "maintenance_tick", "mobility_interval", "overload_threshold",
    "battery_drain", "ch_drain_factor", "events", "debug",
}


def scenario_from_text(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError([("", line, f"not valid YAML: {exc}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("", None, "scenario must be a mapping at top level")])
    return _build(_Reader(data, _line_map(text)))


def parse_scenario(file: str | Path) -> Scenario:
    try:
        text = Path(file).read_text()
    except OSError as exc:
        raise ConfigError([("", None, f"cannot read {file}: {exc.strerror}")]) from None
    return scenario_from_text(text)


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _build(rd: _Reader) -> Scenario:
    rd.only_keys((), _TOP_KEYS)
    rd.only_keys(("grid",), {"rows", "cols", "width", "height"})
    rd.only_keys(("nodes",), {"count", "radio_range", "speed", "battery", "computation", "positions"})
    rd.only_keys(("weights",), {"a1", "a2", "a3", "a4", "a5"})
    for section in ("grid", "nodes"):
        if rd.lookup((section,)) is _MISSING:
            rd.error((section,), "required section is missing")
        elif not isinstance(rd.lookup((section,)), dict):
            rd.error((section,), "expected a mapping")

    name = rd.get(("name",), "str", "")
    seed = rd.get(("seed",), "int", 0, required=True)
    rows = rd.get(("grid", "rows"), "int", 1, required=True, check=lambda v: v >= 1, why=">= 1")
    cols = rd.get(("grid", "cols"), "int", 1, required=True, check=lambda v: v >= 1, why=">= 1")
    width = rd.get(("grid", "width"), "float", DEFAULTS["grid.width"], check=_positive, why="> 0")
    height = rd.get(("grid", "height"), "float", DEFAULTS["grid.height"], check=_positive, why="> 0")
    grid = GridConfig(width, height, rows, cols)

    positions = None
    raw_pos = rd.lookup(("nodes", "positions"))
    if raw_pos is not _MISSING and raw_pos is not None:
        if not isinstance(raw_pos, list):
            rd.error(("nodes", "positions"), "expected a list of [x, y] pairs")
        else:
            positions = []
            for i in range(len(raw_pos)):
                p = rd.get(("nodes", "positions", i), "pair")
                if p is None:
                    continue
                if not grid.contains(*p):
                    rd.error(("nodes", "positions", i), f"position {list(p)} outside the world")
                positions.append(p)
            positions = tuple(positions)
    count = rd.get(
        ("nodes", "count"), "int", None, required=positions is None, check=_nonneg, why=">= 0"
    )
    if positions is not None:
        if count is not None and count != len(positions):
            rd.error(("nodes", "count"), f"count {count} disagrees with {len(positions)} positions")
        count = len(positions)
    count = count or 0
    radio = rd.get(("nodes", "radio_range"), "float", DEFAULTS["nodes.radio_range"], check=_positive, why="> 0")

    def rng_pair(key, default, lo=0.0, hi=math.inf):
        return rd.get(
            ("nodes", key), "pair", default,
            check=lambda p: lo <= p[0] <= p[1] <= hi, why=f"{lo} <= low <= high <= {hi}",
        )

    speed = rng_pair("speed", DEFAULTS["nodes.speed"])
    battery = rng_pair("battery", DEFAULTS["nodes.battery"], hi=1.0)
    computation = rng_pair("computation", DEFAULTS["nodes.computation"], hi=1.0)

    wdef = DEFAULTS["weights"]
    in_unit = (lambda v: 0 <= v <= 1)
    w = [
        rd.get(("weights", f"a{k + 1}"), "float", wdef[k], check=in_unit, why="within [0, 1]")
        for k in range(5)
    ]

    def scalar(key, kind, check, why):
        return rd.get((key,), kind, DEFAULTS[key], check=check, why=why)

    capacity = scalar("link_capacity", "float", _nonneg, ">= 0")
    period = scalar("election_period", "float", _positive, "> 0")
    tick = scalar("maintenance_tick", "float", _positive, "> 0")
    mobility = scalar("mobility_interval", "float", _positive, "> 0")
    overload = scalar("overload_threshold", "int", lambda v: v >= 1, ">= 1")
    drain = scalar("battery_drain", "float", _nonneg, ">= 0")
    factor = scalar("ch_drain_factor", "float", _nonneg, ">= 0")
    duration = rd.get(("duration",), "float", None, check=_nonneg, why=">= 0")
    debug = rd.get(("debug",), "bool", False)

    events = _read_events(rd, count)
    if rd.problems:
        raise ConfigError(rd.problems)
    return Scenario(
        grid=grid,
        nodes=NodeSpec(count, radio, speed, battery, computation, positions),
        seed=seed,
        weights=ElectionWeights(*w),
        link_capacity=capacity,
        election_period=period,
        maintenance_tick=tick,
        mobility_interval=mobility,
        overload_threshold=overload,
        battery_drain=drain,
        ch_drain_factor=factor,
        duration=duration,
        events=tuple(events),
        name=name,
        debug=debug,
    )


def _read_events(rd: _Reader, count: int) -> list[ScenarioEvent]:
    raw = rd.lookup(("events",))
    if raw is _MISSING or raw is None:
        return []
    if not isinstance(raw, list):
        rd.error(("events",), "expected a list of events")
        return []
    node_ok = (lambda v: 0 <= v < count)
    node_why = f"node id in [0, {count})"
    flow_ids: set[str] = set()
    out = []
    for i, item in enumerate(raw):
        base = ("events", i)
        if not isinstance(item, dict):
            rd.error(base, "event must be a mapping")
            continue
        time = rd.get(base + ("time",), "float", 0.0, required=True, check=_nonneg, why=">= 0")
        kind_name = rd.get(base + ("kind",), "str", None, required=True)
        try:
            kind = EventKind(kind_name)
        except ValueError:
            if kind_name is not None:
                names = ", ".join(k.value for k in EventKind)
                rd.error(base + ("kind",), f"unknown event kind {kind_name!r} (one of {names})")
            continue
        rd.only_keys(base, {"time", "kind"} | _EVENT_KEYS[kind])
        ev = None
        if kind is EventKind.FLOW_ARRIVAL:
            fid = rd.get(base + ("flow",), "str", None, required=True,
                         check=_FLOW_ID.match, why="letters, digits and _.:- only")
            src = rd.get(base + ("src",), "int", 0, required=True, check=node_ok, why=node_why)
            dst = rd.get(base + ("dst",), "int", 0, required=True, check=node_ok, why=node_why)
            demand = rd.get(base + ("demand",), "float", 1.0, required=True, check=_positive, why="> 0")
            dur = rd.get(base + ("duration",), "float", math.inf, check=_positive, why="> 0")
            if fid is not None:
                if fid in flow_ids:
                    rd.error(base + ("flow",), f"duplicate flow id {fid!r}")
                flow_ids.add(fid)
                try:
                    flow = FlowRequest(fid, src, dst, demand, time, dur)
                except DomainError as exc:
                    rd.error(base, str(exc))
                else:
                    ev = ScenarioEvent(time, kind, flow=flow, flow_id=fid)
        elif kind is EventKind.FLOW_DEPARTURE:
            fid = rd.get(base + ("flow",), "str", None, required=True)
            ev = ScenarioEvent(time, kind, flow_id=fid)
        elif kind is EventKind.NODE_CRASH:
            node = rd.get(base + ("node",), "int", 0, required=True, check=node_ok, why=node_why)
            ev = ScenarioEvent(time, kind, node=node)
        elif kind is EventKind.LINK_CUT:
            pair = rd.get(base + ("nodes",), "pair", None, required=True,
                          check=lambda p: all(float(v).is_integer() and 0 <= v < count for v in p)
                          and p[0] != p[1], why=f"two distinct node ids in [0, {count})")
            if pair is not None:
                ev = ScenarioEvent(time, kind, node=int(pair[0]), peer=int(pair[1]))
        elif kind is EventKind.INTRUDER_SEIZURE:
            node = rd.get(base + ("node",), "int", 0, required=True, check=node_ok, why=node_why)
            seized = rd.get(base + ("seized",), "float", 0.0, required=True, check=_nonneg, why=">= 0")
            ev = ScenarioEvent(time, kind, node=node, seized=seized)
        else:
            ev = ScenarioEvent(time, kind)
        if ev is not None:
            out.append(ev)
    return out


def scenario_to_dict(s: Scenario) -> dict:
    nodes: dict[str, Any] = {
        "count": s.nodes.count,
        "radio_range": s.nodes.radio_range,
        "speed": list(s.nodes.speed_range),
        "battery": list(s.nodes.battery_range),
        "computation": list(s.nodes.computation_range),
    }
    if s.nodes.positions is not None:
        nodes["positions"] = [list(p) for p in s.nodes.positions]
    out: dict[str, Any] = {
        "name": s.name,
        "seed": s.seed,
        "grid": {
            "rows": s.grid.rows,
            "cols": s.grid.cols,
            "width": s.grid.world_width,
            "height": s.grid.world_height,
        },
        "nodes": nodes,
        "weights": {f"a{k + 1}": w for k, w in enumerate(s.weights.as_tuple())},
        "link_capacity": s.link_capacity,
        "election_period": s.election_period,
        "maintenance_tick": s.maintenance_tick,
        "mobility_interval": s.mobility_interval,
        "overload_threshold": s.overload_threshold,
        "battery_drain": s.battery_drain,
        "ch_drain_factor": s.ch_drain_factor,
        "debug": s.debug,
    }
    if s.duration is not None:
        out["duration"] = s.duration
    out["events"] = [_event_to_dict(e) for e in s.events]
    return out


def _event_to_dict(e: ScenarioEvent) -> dict:
    d: dict[str, Any] = {"time": e.time, "kind": e.kind.value}
    if e.kind is EventKind.FLOW_ARRIVAL:
        f = e.flow
        d.update(flow=f.flow_id, src=f.src, dst=f.dst, demand=f.demand)
        if math.isfinite(f.duration):
            d["duration"] = f.duration
    elif e.kind is EventKind.FLOW_DEPARTURE:
        d["flow"] = e.flow_id
    elif e.kind is EventKind.NODE_CRASH:
        d["node"] = e.node
    elif e.kind is EventKind.LINK_CUT:
        d["nodes"] = [e.node, e.peer]
    elif e.kind is EventKind.INTRUDER_SEIZURE:
        d.update(node=e.node, seized=e.seized)
    return d


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)
