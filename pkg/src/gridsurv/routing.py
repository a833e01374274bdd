"""Gateways, the cluster connectivity graph and two-phase (zone, then node) routing.

Routing treats cluster heads as control-plane only: data paths run over
ordinary members and gateway links.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np

from gridsurv.clustering import ClusterMap
from gridsurv.errors import DomainError
from gridsurv.world import GridConfig, LinkSet, NodeId, NodeState, ZoneId, zone_of

# Upper bound on partial zone paths expanded per route() call.
MAX_ZONE_PATHS = 200_000


class GatewayLink(NamedTuple):
    local_node: NodeId
    remote_node: NodeId
    local_zone: ZoneId
    remote_zone: ZoneId


@dataclass
class ZoneEdge:
    """Gateway links joining ``zones[0]`` to ``zones[1]``.

    ``pairs`` holds ``(node in zones[0], node in zones[1])`` per link;
    ``residual`` is the best residual among them.
    """

    zones: tuple[ZoneId, ZoneId]
    pairs: list[tuple[NodeId, NodeId]]
    residual: float

    @property
    def links(self) -> list[GatewayLink]:
        a, b = self.zones
        return [GatewayLink(u, v, a, b) for u, v in self.pairs]


@dataclass
class ClusterConnectivityGraph:
    vertices: set[ZoneId] = field(default_factory=set)
    edges: dict[tuple[ZoneId, ZoneId], ZoneEdge] = field(default_factory=dict)
    # registration snapshot the graph was built from
    zones: dict[NodeId, ZoneId] = field(default_factory=dict, repr=False)

    def refresh_residuals(self, links: LinkSet, pairs: Iterable[tuple[NodeId, NodeId]]) -> None:
        """Recompute edge residuals after reservations changed on ``pairs``.

        Cheaper than a rebuild when only the ledger moved; the link and
        registration structure must be unchanged.
        """
        touched = set()
        for u, v in pairs:
            zu, zv = self.zones.get(u), self.zones.get(v)
            if zu is not None and zv is not None and zu != zv:
                touched.add((zu, zv) if zu < zv else (zv, zu))
        if not touched:
            return
        # no link can beat the largest capacity, so a scan may stop there
        ceiling = links.max_capacity()
        for key in touched:
            edge = self.edges.get(key)
            if edge is None:
                continue
            best = -math.inf
            for u, v in edge.pairs:
                if (u, v) in links:
                    r = links.residual(u, v)
                    if r > best:
                        best = r
                        if best >= ceiling:
                            break
            edge.residual = best

    def edge(self, a: ZoneId, b: ZoneId) -> ZoneEdge | None:
        return self.edges.get((a, b) if a < b else (b, a))

    def neighbors(self, zone: ZoneId, min_residual: float = 0.0) -> list[ZoneId]:
        out = []
        for (a, b), e in self.edges.items():
            if e.residual < min_residual:
                continue
            if a == zone:
                out.append(b)
            elif b == zone:
                out.append(a)
        return sorted(out)


@dataclass(frozen=True)
class RoutePath:
    node_path: tuple[NodeId, ...]
    zone_path: tuple[ZoneId, ...]

    def links(self) -> list[tuple[NodeId, NodeId]]:
        return list(zip(self.node_path, self.node_path[1:]))


@dataclass
class RoutingStats:
    """Counts route() outcomes that are not plain successes or disconnections."""

    zone_infeasible: int = 0
    search_exhausted: int = 0


def _cross_zone(
    nodes: Mapping[NodeId, NodeState], links: LinkSet, zones: Mapping[NodeId, ZoneId]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[ZoneId]]:
    """Link keys whose endpoints are alive, registered and in different zones.

    Returns the keys (sorted), the zone ordinal of each endpoint, and the
    zones in ordinal order; ordinals follow ZoneId ordering.
    """
    arr = links.pair_array()
    ordered = sorted(set(zones.values()))
    if len(arr) == 0:
        empty = np.empty(0, dtype=np.int64)
        return arr, empty, empty, ordered
    ordinal = {z: i for i, z in enumerate(ordered)}
    # node ids are non-negative, so a flat lookup table indexed by id works
    table = [-1] * (max(int(arr.max()), max(zones, default=0)) + 1)
    for n, z in zones.items():
        if nodes[n].alive:
            table[n] = ordinal[z]
    code = np.array(table, dtype=np.int64)
    cu, cv = code[arr[:, 0]], code[arr[:, 1]]
    keep = (cu >= 0) & (cv >= 0) & (cu != cv)
    return arr[keep], cu[keep], cv[keep], ordered


def gateway_nodes(
    nodes: Mapping[NodeId, NodeState], links: LinkSet, zones: Mapping[NodeId, ZoneId]
) -> set[NodeId]:
    sel = _cross_zone(nodes, links, zones)[0]
    return set(np.unique(sel).tolist())


def is_gateway(
    node: NodeState, nodes: Mapping[NodeId, NodeState], links: LinkSet, grid: GridConfig
) -> bool:
    if not node.alive:
        raise DomainError(f"node {node.id} is dead")
    here = zone_of(node.position, grid)
    for v in links.neighbors(node.id):
        other = nodes[v]
        if other.alive and zone_of(other.position, grid) != here:
            return True
    return False


def _residuals(links: LinkSet, keys: np.ndarray) -> np.ndarray:
    """Residual of each ``(u, v)`` row of ``keys``; only links off the common capacity or holding reservations are looked up one by one."""
    base = links.base_capacity
    out = np.full(len(keys), base if base is not None else 0.0)
    special = links.special_pairs()
    if special and len(keys):
        scale = int(keys.max()) + 1
        enc = keys[:, 0] * scale + keys[:, 1]
        wanted = np.array([u * scale + v for u, v in special if max(u, v) < scale], dtype=np.int64)
        for i in np.flatnonzero(np.isin(enc, wanted)).tolist():
            out[i] = links.residual(int(keys[i, 0]), int(keys[i, 1]))
    return out


def build_zone_graph(
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    cmap: ClusterMap,
    grid: GridConfig | None = None,
) -> ClusterConnectivityGraph:
    zones = cmap.registered_zones()
    graph = ClusterConnectivityGraph(zones=zones)
    graph.vertices = {z for z in cmap if cmap[z].members}
    sel, cu, cv, ordered = _cross_zone(nodes, links, zones)
    if len(sel) == 0:
        return graph
    # orient each gateway link from the lower zone to the higher one
    swap = cu > cv
    lo = np.where(swap, sel[:, 1], sel[:, 0])
    hi = np.where(swap, sel[:, 0], sel[:, 1])
    za, zb = np.minimum(cu, cv), np.maximum(cu, cv)
    residual = _residuals(links, sel)
    width = len(ordered)
    ekey = za * width + zb
    order = np.argsort(ekey, kind="stable")
    keys, starts = np.unique(ekey[order], return_index=True)
    best = np.maximum.reduceat(residual[order], starts)
    lo_l, hi_l = lo[order].tolist(), hi[order].tolist()
    ends = starts.tolist()[1:] + [len(order)]
    for k, start, end, r in zip(keys.tolist(), starts.tolist(), ends, best.tolist()):
        edge_zones = (ordered[k // width], ordered[k % width])
        pairs = list(zip(lo_l[start:end], hi_l[start:end]))
        graph.edges[edge_zones] = ZoneEdge(edge_zones, pairs, r)
    return graph


def _lex_shortest(
    src: NodeId,
    dst: NodeId,
    succ: Callable[[NodeId], Iterable[NodeId]],
    pred: Callable[[NodeId], Iterable[NodeId]],
) -> list[NodeId] | None:
    """Hop-count shortest path, lexicographically smallest id sequence on ties."""
    dist = {dst: 0}
    queue = deque([dst])
    while queue and src not in dist:
        v = queue.popleft()
        for u in pred(v):
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    if src not in dist:
        return None
    path = [src]
    while path[-1] != dst:
        d = dist[path[-1]]
        path.append(min(v for v in succ(path[-1]) if dist.get(v) == d - 1))
    return path


def _dedup(seq: Iterable[ZoneId]) -> tuple[ZoneId, ...]:
    out: list[ZoneId] = []
    for z in seq:
        if not out or out[-1] != z:
            out.append(z)
    return tuple(out)


class _UsableAdjacency(dict):
    """Sorted usable neighbor lists, filled in on first lookup of each node.

    Only links short on residual and nodes that are dead or unregistered
    need filtering, and both are usually few, so most lookups hand back
    the LinkSet's own sorted list untouched.
    """

    def __init__(self, nodes, links: LinkSet, zones, min_residual: float):
        super().__init__()
        self.links = links
        self.blocked: dict[NodeId, set[NodeId]] = {}
        for u, v in links.pairs_below(min_residual):
            self.blocked.setdefault(u, set()).add(v)
            self.blocked.setdefault(v, set()).add(u)
        self.excluded = {
            n for n, node in nodes.items()
            if (not node.alive or n not in zones) and links.has_node(n)
        }

    def __missing__(self, u: NodeId) -> list[NodeId]:
        out = self.links.neighbors(u)
        bad = self.blocked.get(u)
        if bad or self.excluded:
            skip = self.excluded | bad if bad else self.excluded
            out = [v for v in out if v not in skip]
        self[u] = out
        return out


def _connected(src: NodeId, dst: NodeId, step: Callable[[NodeId], Iterable[NodeId]]) -> bool:
    """Whether ``dst`` is reachable from ``src``; links are undirected so
    the search grows from both ends, always extending the smaller frontier."""
    if src == dst:
        return True
    seen = ({src}, {dst})
    frontier = ([src], [dst])
    while frontier[0] and frontier[1]:
        side = 0 if len(frontier[0]) <= len(frontier[1]) else 1
        mine, other = seen[side], seen[1 - side]
        nxt = []
        for u in frontier[side]:
            for v in step(u):
                if v in other:
                    return True
                if v not in mine:
                    mine.add(v)
                    nxt.append(v)
        frontier = (nxt, frontier[1]) if side == 0 else (frontier[0], nxt)
    return False


def usable_adjacency(
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    zones: Mapping[NodeId, ZoneId],
    min_residual: float,
) -> dict[NodeId, list[NodeId]]:
    """Sorted neighbor lists over alive registered nodes and links with enough residual."""
    adj = _UsableAdjacency(nodes, links, zones, min_residual)
    return {n: list(adj[n]) for n in sorted(zones) if nodes[n].alive}


def route(
    src: NodeId,
    dst: NodeId,
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    cmap: ClusterMap,
    zone_graph: ClusterConnectivityGraph,
    min_residual: float = 0.0,
    stats: RoutingStats | None = None,
) -> RoutePath | None:
    """Find a path from ``src`` to ``dst`` on links with residual >= ``min_residual``.

    Endpoints in one zone get a plain shortest path over the whole link
    graph. Otherwise the zone sequence is chosen first: zone paths are
    tried in (hop count, ZoneId sequence) order and the first one that can
    be expanded into a node path, entering each zone only from its
    predecessor, wins. A flat-connected pair with no such zone path
    returns None and bumps ``stats.zone_infeasible``.
    """
    for end in (src, dst):
        if end not in nodes or not nodes[end].alive:
            raise DomainError(f"route endpoint {end} is not an alive node")
    zones = cmap.registered_zones()
    if src not in zones or dst not in zones:
        raise DomainError("route endpoints must be registered in the cluster map")
    if src == dst:
        return RoutePath((src,), (zones[src],))

    adj = _UsableAdjacency(nodes, links, zones, min_residual)
    flat = adj.__getitem__

    if zones[src] == zones[dst]:
        path = _lex_shortest(src, dst, flat, flat)
        if path is None:
            return None
        return RoutePath(tuple(path), _dedup(zones[n] for n in path))

    if not _connected(src, dst, flat):
        return None

    zone_path = _best_zone_path(src, dst, zones, adj, zone_graph, min_residual, stats)
    if zone_path is None:
        if stats is not None:
            stats.zone_infeasible += 1
        return None
    path = expand_zone_path(src, dst, zone_path, zones, flat)
    assert path is not None
    return RoutePath(tuple(path), zone_path)


def expand_zone_path(
    src: NodeId,
    dst: NodeId,
    zone_path: tuple[ZoneId, ...],
    zones: Mapping[NodeId, ZoneId],
    flat: Callable[[NodeId], Iterable[NodeId]],
) -> list[NodeId] | None:
    """Shortest node path whose zone projection is exactly ``zone_path``."""
    pos = {z: i for i, z in enumerate(zone_path)}
    where = {n: pos[z] for n, z in zones.items() if z in pos}

    def succ(u: NodeId):
        i = where[u]
        return [v for v in flat(u) if where.get(v, -2) - i in (0, 1)]

    def pred(v: NodeId):
        i = where[v]
        return [u for u in flat(v) if i - where.get(u, -2) in (0, 1)]

    return _lex_shortest(src, dst, succ, pred)


def _zone_hops_to(target: ZoneId, graph: ClusterConnectivityGraph, min_residual: float) -> dict[ZoneId, int]:
    adj: dict[ZoneId, list[ZoneId]] = {}
    for (a, b), e in graph.edges.items():
        if e.residual >= min_residual:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
    dist = {target: 0}
    queue = deque([target])
    while queue:
        z = queue.popleft()
        for y in adj.get(z, ()):
            if y not in dist:
                dist[y] = dist[z] + 1
                queue.append(y)
    return dist


def _best_zone_path(
    src: NodeId,
    dst: NodeId,
    zones: Mapping[NodeId, ZoneId],
    adj: Mapping[NodeId, list[NodeId]],
    zone_graph: ClusterConnectivityGraph,
    min_residual: float,
    stats: RoutingStats | None,
) -> tuple[ZoneId, ...] | None:
    # A* over simple zone paths keyed by (hops so far + hops still needed,
    # path). The estimate never overshoots, so the first complete path
    # popped is the shortest and, among equals, the smallest sequence.
    # Each entry carries the nodes it can enter its last zone through;
    # prefixes that reach nobody are dropped.
    z_src, z_dst = zones[src], zones[dst]
    hops = _zone_hops_to(z_dst, zone_graph, min_residual)
    if z_src not in hops:
        return None

    def closure(seeds: Iterable[NodeId], zone: ZoneId) -> frozenset[NodeId]:
        seen = set(seeds)
        stack = list(seen)
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen and zones[v] == zone:
                    seen.add(v)
                    stack.append(v)
        return frozenset(seen)

    start = (z_src,)
    # entry seeds per queued path; the closure is only taken once popped
    seeds = {start: {src}}
    heap = [(hops[z_src], start)]
    expanded = 0
    while heap:
        _, path = heapq.heappop(heap)
        last = path[-1]
        here = closure(seeds.pop(path), last)
        if last == z_dst:
            if dst in here:
                return path
            continue
        expanded += 1
        if expanded > MAX_ZONE_PATHS:
            if stats is not None:
                stats.search_exhausted += 1
            return None
        seeds_by_zone: dict[ZoneId, set[NodeId]] = {}
        for u in here:
            for v in adj[u]:
                zv = zones[v]
                if zv != last:
                    seeds_by_zone.setdefault(zv, set()).add(v)
        for nxt in zone_graph.neighbors(last, min_residual):
            if nxt in path or nxt not in hops or nxt not in seeds_by_zone:
                continue
            new = path + (nxt,)
            seeds[new] = seeds_by_zone[nxt]
            heapq.heappush(heap, (len(path) + hops[nxt], new))
    return None


def route_problems(
    path: RoutePath,
    links: LinkSet,
    zones: Mapping[NodeId, ZoneId],
    zone_graph: ClusterConnectivityGraph,
    min_residual: float = 0.0,
) -> list[str]:
    """Check a RoutePath against its structural invariants; empty list means valid."""
    problems = []
    for u, v in path.links():
        link = links.get(u, v)
        if link is None:
            problems.append(f"no link {u}-{v}")
        elif link.residual < min_residual:
            problems.append(f"link {u}-{v} residual {link.residual} < {min_residual}")
    if _dedup(zones[n] for n in path.node_path) != tuple(path.zone_path):
        problems.append("zone_path is not the projection of node_path")
    for a, b in zip(path.zone_path, path.zone_path[1:]):
        if zone_graph.edge(a, b) is None:
            problems.append(f"zones {a} and {b} are not adjacent in the zone graph")
    return problems

