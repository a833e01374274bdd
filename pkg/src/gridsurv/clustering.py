"""Eligibility scoring, cluster-head election and initial cluster construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from gridsurv.errors import DomainError
from gridsurv.world import GridConfig, LinkSet, NodeId, NodeState, ZoneId, zone_of


@dataclass(frozen=True)
class ElectionWeights:
    """Weights for speed, CH history, battery, computation and drained battery.

    ``a5`` multiplies ``1 - battery`` and defaults to 0, since it rewards
    nodes that are running out of power.
    """

    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0
    a4: float = 1.0
    a5: float = 0.0

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "a4", "a5"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"weight {name}={value} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.a1, self.a2, self.a3, self.a4, self.a5)


@dataclass
class ClusterState:
    zone: ZoneId
    ch: NodeId | None = None
    backup: NodeId | None = None
    members: set[NodeId] = field(default_factory=set)
    gateways: set[NodeId] = field(default_factory=set)

    def copy(self) -> ClusterState:
        return ClusterState(self.zone, self.ch, self.backup, set(self.members), set(self.gateways))


class ClusterMap:
    """One ClusterState per grid zone, keyed by ZoneId."""

    def __init__(self, clusters: Mapping[ZoneId, ClusterState]):
        self.clusters: dict[ZoneId, ClusterState] = dict(clusters)

    @classmethod
    def empty(cls, grid: GridConfig) -> ClusterMap:
        return cls({z: ClusterState(z) for z in grid.zones()})

    def __getitem__(self, zone: ZoneId) -> ClusterState:
        return self.clusters[zone]

    def __iter__(self):
        return iter(sorted(self.clusters))

    def __len__(self) -> int:
        return len(self.clusters)

    def values(self):
        return [self.clusters[z] for z in sorted(self.clusters)]

    def copy(self) -> ClusterMap:
        return ClusterMap({z: c.copy() for z, c in self.clusters.items()})

    def registered_zones(self) -> dict[NodeId, ZoneId]:
        out = {}
        for zone, cluster in self.clusters.items():
            for n in cluster.members:
                out[n] = zone
        return out

    def zone_with(self, node: NodeId) -> ZoneId | None:
        for zone, cluster in self.clusters.items():
            if node in cluster.members:
                return zone
        return None

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClusterMap):
            return NotImplemented
        return self.clusters == other.clusters

    def __repr__(self) -> str:
        return f"ClusterMap({self.values()!r})"


def eligibility(node: NodeState, weights: ElectionWeights, t: float = 0.0) -> float:
    if not node.alive:
        raise DomainError(f"node {node.id} is dead")
    a1, a2, a3, a4, a5 = weights.as_tuple()
    b = node.battery
    return (
        a1 * math.exp(-node.speed)
        + a2 * math.exp(-node.ch_count)
        + a3 * b
        + a4 * node.computation
        + a5 * (1.0 - b)
    )


def elect(
    members: Iterable[NodeState], weights: ElectionWeights, t: float = 0.0
) -> tuple[NodeId | None, NodeId | None]:
    """Return ``(ch, backup)``: the two best eligibility scores, smaller id on ties."""
    ranked = sorted(((-eligibility(n, weights, t), n.id) for n in members))
    ch = ranked[0][1] if ranked else None
    backup = ranked[1][1] if len(ranked) > 1 else None
    return ch, backup


def construct_clusters(
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    grid: GridConfig,
    weights: ElectionWeights,
    t: float = 0.0,
) -> ClusterMap:
    # local import: routing depends on ClusterMap from this module
    from gridsurv.routing import gateway_nodes

    cmap = ClusterMap.empty(grid)
    zones = {}
    for n in nodes.values():
        if n.alive:
            zones[n.id] = zone_of(n.position, grid)
            cmap[zones[n.id]].members.add(n.id)
    for cluster in cmap.values():
        cluster.ch, cluster.backup = elect((nodes[i] for i in cluster.members), weights, t)
    for nid in gateway_nodes(nodes, links, zones):
        cmap[zones[nid]].gateways.add(nid)
    return cmap


def register(
    cmap: ClusterMap, node: NodeId, from_zone: ZoneId | None, to_zone: ZoneId
) -> ClusterMap:
    """Move ``node`` into ``to_zone``, deregistering it from ``from_zone``.

    Roles the node held in the old zone are vacated; picking a replacement
    is left to maintenance. Returns a new map.
    """
    if to_zone not in cmap.clusters:
        raise DomainError(f"unknown zone {to_zone}")
    if node in cmap[to_zone].members:
        return cmap
    out = cmap.copy()
    if from_zone is not None:
        old = out[from_zone]
        old.members.discard(node)
        old.gateways.discard(node)
        if old.ch == node:
            old.ch = None
        if old.backup == node:
            old.backup = None
    out[to_zone].members.add(node)
    return out
