"""Deterministic discrete-event driver.

Every timestamp is processed as one tick in a fixed order: mobility,
faults, link recomputation, path validation and repair, maintenance,
then flow departures and arrivals. The zone graph is rebuilt lazily, the
first time a route needs it after links or registrations changed;
reservation changes only patch the residuals of the zone edges they touch.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass

from gridsurv.bandwidth import (
    Reservation,
    ReservationState,
    admit,
    conservation_problems,
    path_violation,
    release,
    repair,
    validate_paths,
)
from gridsurv.clustering import ClusterMap, construct_clusters
from gridsurv.errors import ConfigError, InvariantViolation
from gridsurv.maintenance import ChChangeReason, check_overload, maintain, replace_ch
from gridsurv.metrics import MetricsReport, collect_metrics, format_record
from gridsurv.routing import ClusterConnectivityGraph, RoutingStats, build_zone_graph, gateway_nodes
from gridsurv.scenario import EventKind, Scenario, ScenarioEvent
from gridsurv.world import LinkSet, NodeState, link_key, links_of, random_nodes, step_mobility, zone_of

# generated events at k * interval are kept if they fall within this of the end time
_TIME_SLACK = 1e-9


def check_scenario(s: Scenario) -> None:
    """Reject scenarios that cannot be simulated, before anything runs."""
    problems = []

    def bad(key, msg):
        problems.append((key, None, msg))

    n = s.nodes.count
    if n < 0:
        bad("nodes.count", "must be >= 0")
    if not s.nodes.radio_range > 0:
        bad("nodes.radio_range", "must be > 0")
    if s.nodes.positions is not None:
        if len(s.nodes.positions) != n:
            bad("nodes.positions", "length must equal nodes.count")
        for i, (x, y) in enumerate(s.nodes.positions):
            if not s.grid.contains(x, y):
                bad(f"nodes.positions.{i}", "outside the world")
    lo, hi = s.nodes.speed_range
    if not 0 <= lo <= hi:
        bad("nodes.speed", "need 0 <= min <= max")
    for key, (lo, hi) in (("nodes.battery", s.nodes.battery_range), ("nodes.computation", s.nodes.computation_range)):
        if not 0 <= lo <= hi <= 1:
            bad(key, "need 0 <= low <= high <= 1")
    for key in ("election_period", "maintenance_tick", "mobility_interval"):
        if not getattr(s, key) > 0:
            bad(key, "must be > 0")
    if s.link_capacity < 0:
        bad("link_capacity", "must be >= 0")
    if s.overload_threshold < 1:
        bad("overload_threshold", "must be >= 1")
    if s.battery_drain < 0 or s.ch_drain_factor < 0:
        bad("battery_drain", "drain parameters must be >= 0")
    if s.duration is not None and s.duration < 0:
        bad("duration", "must be >= 0")
    seen = set()
    for i, e in enumerate(s.events):
        key = f"events.{i}"
        if e.time < 0 or not math.isfinite(e.time):
            bad(key, "time must be finite and >= 0")
        if e.time > s.end_time:
            bad(key, f"time {e.time} is after the scenario duration {s.end_time}")
        for node in (e.node, e.peer):
            if node is not None and not 0 <= node < n:
                bad(key, f"unknown node id {node}")
        if e.kind is EventKind.FLOW_ARRIVAL:
            f = e.flow
            for node in (f.src, f.dst):
                if not 0 <= node < n:
                    bad(key, f"unknown node id {node}")
            if f.flow_id in seen:
                bad(key, f"duplicate flow id {f.flow_id}")
            seen.add(f.flow_id)
    if problems:
        raise ConfigError(problems)


@dataclass
class TickFlags:
    links: bool = False
    topology: bool = True
    load: bool = True


class Simulation:
    """Mutable state of one scenario run. ``run()`` is the usual entry point."""

    def __init__(self, scenario: Scenario, debug: bool | None = None):
        check_scenario(scenario)
        self.s = scenario
        self.debug = scenario.debug if debug is None else debug
        self.rng = random.Random(scenario.seed)
        self.trace: list[str] = []
        self.reservations: dict[str, Reservation] = {}
        self.cut: set[tuple[int, int]] = set()
        self.seized: dict[int, float] = {}
        self.stats = RoutingStats()
        self.flags = TickFlags()
        self.pending_period = False
        self.last_mobility = 0.0
        self.last_drain = 0.0
        self.t = 0.0
        self._queue: list[tuple[float, int, int, ScenarioEvent]] = []
        self._counter = 0
        self._summary: tuple[int, float, float, int] | None = None
        self._zone_graph: ClusterConnectivityGraph | None = None

    # -- setup -----------------------------------------------------------

    def _emit(self, kind: str, **fields) -> None:
        self.trace.append(format_record(self.t, kind, **fields))

    def _push(self, event: ScenarioEvent) -> None:
        heapq.heappush(self._queue, (event.time, event.kind.priority, self._counter, event))
        self._counter += 1

    def _schedule(self) -> None:
        end = self.s.end_time
        for e in self.s.events:
            self._push(e)
        periodic = (
            (EventKind.MAINTENANCE_TICK, self.s.maintenance_tick),
            (EventKind.MOBILITY_EPOCH, self.s.mobility_interval),
            (EventKind.ELECTION_PERIOD_BOUNDARY, self.s.election_period),
        )
        for kind, step in periodic:
            k = 1
            while k * step <= end + _TIME_SLACK:
                self._push(ScenarioEvent(k * step, kind))
                k += 1

    def initialize(self) -> None:
        s = self.s
        spec = s.nodes
        nodes = random_nodes(
            spec.count, s.grid, self.rng, spec.radio_range,
            spec.speed_range, spec.battery_range, spec.computation_range,
        )
        if spec.positions is not None:
            for node, (x, y) in zip(nodes, spec.positions):
                node.x, node.y = x, y
        self.nodes: dict[int, NodeState] = {n.id: n for n in nodes}
        g = s.grid
        self._emit(
            "INIT", seed=s.seed, nodes=spec.count, rows=g.rows, cols=g.cols,
            width=float(g.world_width), height=float(g.world_height),
            range=float(spec.radio_range), capacity=float(s.link_capacity),
        )
        for n in nodes:
            self._emit("NODE", node=n.id, x=n.x, y=n.y, speed=n.speed,
                       battery=n.battery, computation=n.computation)
        self.links = self._compute_links()
        self._emit("LINKS", count=len(self.links))
        self.cmap = construct_clusters(self.nodes, self.links, s.grid, s.weights, 0.0)
        for c in self.cmap.values():
            if c.ch is not None:
                self.nodes[c.ch].ch_count += 1
            self._emit("CLUSTER", zone=c.zone, ch=c.ch, backup=c.backup,
                       members=len(c.members), gateways=len(c.gateways))
        self._zone_graph = None
        self.flags.topology = False
        self._schedule()

    # -- per-tick steps --------------------------------------------------

    def _compute_links(self) -> LinkSet:
        links = links_of(self.nodes.values(), self.s.nodes.radio_range, self.s.link_capacity)
        for u, v in sorted(self.cut):
            links.remove(u, v)
        for node in sorted(self.seized):
            amount = self.seized[node]
            for v in links.neighbors(node):
                links.set_capacity(node, v, max(0.0, links.capacity(node, v) - amount))
        return links

    def _rebuild_links(self) -> None:
        new = self._compute_links()
        for (u, v), held in sorted(self.links.held().items()):
            if (u, v) in new:
                new.add_reserved(u, v, held)
        self.links = new
        self.flags.links = False
        self.flags.topology = True
        self._summary = None
        self._zone_graph = None

    def _move(self) -> None:
        dt = self.t - self.last_mobility
        self.last_mobility = self.t
        if dt <= 0:
            return
        before = self.nodes
        moved_nodes = step_mobility(before.values(), dt, self.rng, self.s.grid, self.s.nodes.speed_range)
        self.nodes = {n.id: n for n in moved_nodes}
        moved = sum(1 for n in moved_nodes if n.x != before[n.id].x or n.y != before[n.id].y)
        self._emit("MOBILITY", dt=dt, moved=moved)
        if moved:
            self.flags.links = True

    def apply_fault(self, event: ScenarioEvent) -> None:
        for node in (event.node, event.peer):
            if node is not None and node not in self.nodes:
                raise ConfigError(f"fault at t={event.time} names unknown node {node}")
        if event.kind is EventKind.NODE_CRASH:
            self.nodes[event.node].alive = False
            self.flags.links = True
            self._emit("FAULT", fault="crash", node=event.node, peer=None, seized=None)
        elif event.kind is EventKind.LINK_CUT:
            self.cut.add(link_key(event.node, event.peer))
            self.flags.links = True
            self._emit("FAULT", fault="cut", node=event.node, peer=event.peer, seized=None)
        elif event.kind is EventKind.INTRUDER_SEIZURE:
            if event.seized > 0:
                self.seized[event.node] = self.seized.get(event.node, 0.0) + event.seized
                self.flags.links = True
            self._emit("FAULT", fault="seize", node=event.node, peer=None, seized=float(event.seized))
        else:
            raise ValueError(f"{event.kind} is not a fault")

    def _holding(self) -> list[Reservation]:
        return [r for _, r in sorted(self.reservations.items()) if r.state.holds]

    def _validate_and_repair(self) -> None:
        flagged = validate_paths(self._holding(), self.nodes, self.links)
        for fid, violation in flagged:
            self._emit("VIOLATION", flow=fid, violation=str(violation))
        for fid, _ in flagged:
            res = self.reservations[fid]
            # an earlier repair this tick may already have freed the overbooked link
            if path_violation(res, self.nodes, self.links) is None:
                continue
            old_links = res.path.links()
            repair(res, self.nodes, self.links, self.cmap, self.zone_graph, self.stats)
            self._summary = None
            self._ledger_moved(old_links + (res.path.links() if res.state.holds else []))
            self.flags.load = True
            if res.state is ReservationState.REPAIRED:
                self._emit("REPAIRED", flow=fid, path=res.path.node_path,
                           zones=res.path.zone_path, repairs=res.repair_count)
            else:
                self._emit("REPAIR_FAILED", flow=fid)

    def _drain(self) -> None:
        elapsed = self.t - self.last_drain
        self.last_drain = self.t
        rate = self.s.battery_drain
        if elapsed <= 0 or rate <= 0:
            return
        heads = {c.ch for c in self.cmap.values() if c.ch is not None}
        for nid, node in self.nodes.items():
            if node.alive:
                k = self.s.ch_drain_factor if nid in heads else 1.0
                node.battery = max(0.0, node.battery - rate * k * elapsed)

    def _maintain(self) -> None:
        s = self.s
        ran = False
        if self.flags.topology or self.pending_period:
            self._drain()
            new_map, report = maintain(
                self.nodes, self.links, self.cmap, s.grid, s.weights, self.t, self.pending_period
            )
            self.pending_period = False
            self.flags.topology = False
            for node, zone in report.removed_nodes:
                self._emit("REMOVE", node=node, zone=zone)
            for node, src, dst in report.moved_nodes:
                self._emit("MOVE", node=node, **{"from": src, "to": dst})
            for node, zone, now in report.gateway_changes:
                self._emit("GATEWAY", node=node, zone=zone, gateway=now)
            for zone, old, new, reason in report.ch_changes:
                self._emit("CH_CHANGE", zone=zone, old=old, new=new, reason=reason.value)
            for zone, ch in report.ch_formations:
                self._emit("CH_FORMED", zone=zone, ch=ch)
            ran = new_map != self.cmap
            self.cmap = new_map
        if self.flags.load or ran:
            self.flags.load = False
            holding = self._holding()
            if holding:
                self._check_overload(holding)
        if ran:
            self._zone_graph = None

    def _check_overload(self, holding: list[Reservation]) -> None:
        for zone in self.cmap:
            cluster = self.cmap[zone]
            if not check_overload(cluster, holding, self.s.overload_threshold):
                continue
            self._drain()
            new = replace_ch(cluster, self.nodes, self.s.weights, self.t, ChChangeReason.CH_OVERLOADED)
            self.cmap.clusters[zone] = new
            self._zone_graph = None
            if new.ch != cluster.ch:
                self._emit("CH_CHANGE", zone=zone, old=cluster.ch, new=new.ch,
                           reason=ChChangeReason.CH_OVERLOADED.value)

    def _depart(self, flow_id: str) -> None:
        res = self.reservations.get(flow_id)
        if res is None or not res.state.holds:
            return
        prior = res.state.value
        release(res, self.links)
        self._summary = None
        self._ledger_moved(res.path.links())
        self.flags.load = True
        self._emit("RELEASE", flow=flow_id, state=prior)

    def _arrive(self, event: ScenarioEvent) -> None:
        f = event.flow
        outcome = admit(f, self.nodes, self.links, self.cmap, self.zone_graph, self.stats)
        if isinstance(outcome, Reservation):
            self.reservations[f.flow_id] = outcome
            self._summary = None
            self._ledger_moved(outcome.path.links())
            self.flags.load = True
            self._emit("ADMIT", flow=f.flow_id, src=f.src, dst=f.dst, demand=float(f.demand),
                       path=outcome.path.node_path, zones=outcome.path.zone_path)
            end = f.start + f.duration
            if math.isfinite(end) and end <= self.s.end_time + _TIME_SLACK:
                self._push(ScenarioEvent(end, EventKind.FLOW_DEPARTURE, flow_id=f.flow_id))
        else:
            self._emit("REJECT", flow=f.flow_id, src=f.src, dst=f.dst, demand=float(f.demand),
                       reason=outcome.reason)

    def _ledger_moved(self, pairs: list[tuple[int, int]]) -> None:
        if self._zone_graph is not None:
            self._zone_graph.refresh_residuals(self.links, pairs)

    @property
    def zone_graph(self) -> ClusterConnectivityGraph:
        """Zone graph for the current links, map and ledger; rebuilt only when read after a change."""
        if self._zone_graph is None:
            self._zone_graph = build_zone_graph(self.nodes, self.links, self.cmap, self.s.grid)
        return self._zone_graph

    def _tick_record(self) -> None:
        if self._summary is None:
            cap = self.links.total_capacity()
            res = self.links.total_reserved()
            active = sum(1 for r in self.reservations.values() if r.state.holds)
            self._summary = (len(self.links), cap, res, active)
        n, cap, res, active = self._summary
        self._emit("TICK", links=n, capacity=cap, reserved=res, residual=cap - res, active=active)

    def step(self, events: list[ScenarioEvent]) -> None:
        kinds = {e.kind for e in events}
        if EventKind.MOBILITY_EPOCH in kinds:
            self._move()
        for e in events:
            if e.kind.is_fault:
                self.apply_fault(e)
        if self.flags.links:
            self._rebuild_links()
            # admissions never overbook, so only a topology change can break a path
            self._validate_and_repair()
        if EventKind.ELECTION_PERIOD_BOUNDARY in kinds:
            self.pending_period = True
        maintained = EventKind.MAINTENANCE_TICK in kinds
        if maintained:
            self._maintain()
        for e in events:
            if e.kind is EventKind.FLOW_DEPARTURE:
                self._depart(e.flow_id)
        for e in events:
            if e.kind is EventKind.FLOW_ARRIVAL:
                self._arrive(e)
        if maintained:
            self._tick_record()
        if self.debug:
            problems = invariant_problems(self, registration=maintained)
            if problems:
                raise InvariantViolation(f"t={self.t}: " + "; ".join(problems[:5]))

    def run(self) -> list[str]:
        self.initialize()
        while self._queue:
            t = self._queue[0][0]
            batch = []
            while self._queue and self._queue[0][0] == t:
                batch.append(heapq.heappop(self._queue)[3])
            self.t = t
            self.step(batch)
        self.t = self.s.end_time
        self._drain()
        self._emit("END", active=len(self._holding()), zone_infeasible=self.stats.zone_infeasible,
                   search_exhausted=self.stats.search_exhausted)
        return self.trace


def run(scenario: Scenario, debug: bool | None = None) -> tuple[list[str], MetricsReport]:
    sim = Simulation(scenario, debug)
    trace = sim.run()
    return trace, collect_metrics(trace)


def invariant_problems(sim: Simulation, registration: bool = True) -> list[str]:
    """Full-state consistency sweep; every check recomputes from scratch."""
    problems = []
    nodes, cmap, links = sim.nodes, sim.cmap, sim.links
    grid = sim.s.grid
    problems += cluster_map_problems(nodes, cmap, grid, check_registration=registration)

    expected = sim._compute_links()
    if expected.pairs() != links.pairs():
        problems.append("link set differs from unit-disk recomputation")
    for key, link in links.items():
        if not (0 <= link.reserved <= link.capacity + 1e-9):
            problems.append(f"link {key} reserved {link.reserved} outside [0, {link.capacity}]")
        if expected.get(*key) is not None and expected.get(*key).capacity != link.capacity:
            problems.append(f"link {key} capacity drifted")
    problems += conservation_problems(sim.reservations.values(), links)
    if registration:
        zones = {n: zone_of(node.position, grid) for n, node in nodes.items() if node.alive}
        gw = gateway_nodes(nodes, links, zones)
        for zone in cmap:
            if cmap[zone].gateways != gw & cmap[zone].members:
                problems.append(f"zone {zone}: stale gateway set")

    if sim._zone_graph is not None:
        fresh = build_zone_graph(nodes, links, cmap, grid)
        cached = sim._zone_graph
        if cached.zones != fresh.zones:
            problems.append("cached zone graph built from a stale registration")
        elif {k: (sorted(e.pairs), e.residual) for k, e in cached.edges.items()} != {
            k: (sorted(e.pairs), e.residual) for k, e in fresh.edges.items()
        }:
            problems.append("cached zone graph differs from a rebuild")

    for res in sim.reservations.values():
        if res.state.holds:
            dead =[n for n in res.path.node_path if not nodes[n].alive]
            if dead:
                problems.append(f"flow {res.flow_id} still routed through dead node(s) {dead}")
    return problems


def cluster_map_problems(nodes, cmap: ClusterMap, grid, check_registration: bool = True) -> list[str]:
    problems = []
    seen: dict[int, object] = {}
    heads = set()
    for zone in cmap:
        c = cmap[zone]
        for n in c.members:
            if n in seen:
                problems.append(f"node {n} registered in {seen[n]} and {zone}")
            seen[n] = zone
            if check_registration and not nodes[n].alive:
                problems.append(f"dead node {n} still a member of {zone}")
        if c.ch is not None:
            if c.ch not in c.members:
                problems.append(f"zone {zone}: CH {c.ch} not a member")
            if c.ch in heads:
                problems.append(f"node {c.ch} is CH of several zones")
            heads.add(c.ch)
        elif c.members and check_registration:
            problems.append(f"zone {zone} has members but no CH")
        if c.backup is not None:
            if c.backup == c.ch or c.backup not in c.members:
                problems.append(f"zone {zone}: invalid backup {c.backup}")
            elif check_registration and not nodes[c.backup].alive:
                problems.append(f"zone {zone}: backup {c.backup} is dead")
        if not c.gateways <= c.members:
            problems.append(f"zone {zone}: gateways not a subset of members")
    if check_registration:
        for nid, node in nodes.items():
            if node.alive and seen.get(nid) != zone_of(node.position, grid):
                problems.append(f"node {nid} registered in {seen.get(nid)}, located in {zone_of(node.position, grid)}")
    return problems

