"""Periodic cluster upkeep: re-registration, gateway status and CH replacement."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from gridsurv.bandwidth import Reservation
from gridsurv.clustering import ClusterMap, ClusterState, ElectionWeights, elect
from gridsurv.errors import DomainError
from gridsurv.routing import gateway_nodes
from gridsurv.world import GridConfig, LinkSet, NodeId, NodeState, ZoneId, zones_of


class ChChangeReason(enum.Enum):
    CH_FAILED = "ChFailed"
    CH_LEFT_CLUSTER = "ChLeftCluster"
    ELECTION_PERIOD_ENDED = "ElectionPeriodEnded"
    CH_OVERLOADED = "ChOverloaded"


@dataclass
class MaintenanceReport:
    moved_nodes: list[tuple[NodeId, ZoneId | None, ZoneId]] = field(default_factory=list)
    ch_changes: list[tuple[ZoneId, NodeId | None, NodeId | None, ChChangeReason]] = field(
        default_factory=list
    )
    gateway_changes: list[tuple[NodeId, ZoneId, bool]] = field(default_factory=list)
    # zones that had no CH and gained one (not a replacement, so no reason)
    ch_formations: list[tuple[ZoneId, NodeId]] = field(default_factory=list)
    removed_nodes: list[tuple[NodeId, ZoneId]] = field(default_factory=list)

    def empty(self) -> bool:
        return not (
            self.moved_nodes
            or self.ch_changes
            or self.gateway_changes
            or self.ch_formations
            or self.removed_nodes
        )


def _alive_members(cluster: ClusterState, nodes: Mapping[NodeId, NodeState]) -> list[NodeState]:
    return [nodes[m] for m in sorted(cluster.members) if nodes[m].alive]


def replace_ch(
    cluster: ClusterState,
    nodes: Mapping[NodeId, NodeState],
    weights: ElectionWeights,
    t: float,
    reason: ChChangeReason,
) -> ClusterState:
    """Pick a new CH for ``cluster``.

    Failure-type reasons promote the recorded backup when it is still an
    alive member and fall back to a fresh election otherwise; an expired
    election period always re-elects. The incoming CH's ``ch_count`` is
    bumped in ``nodes``.
    """
    old = cluster.ch
    if reason is ChChangeReason.CH_FAILED:
        if old is None or nodes[old].alive:
            raise DomainError(f"zone {cluster.zone}: ChFailed but CH {old} is not dead")
    elif reason is ChChangeReason.CH_LEFT_CLUSTER:
        if old is None or old in cluster.members:
            raise DomainError(f"zone {cluster.zone}: ChLeftCluster but CH {old} is still a member")
    elif reason is ChChangeReason.CH_OVERLOADED:
        if old is None or old not in cluster.members or not nodes[old].alive:
            raise DomainError(f"zone {cluster.zone}: ChOverloaded needs a sitting CH")

    out = cluster.copy()
    candidates = _alive_members(out, nodes)
    if reason is ChChangeReason.ELECTION_PERIOD_ENDED:
        out.ch, out.backup = elect(candidates, weights, t)
    else:
        others = [n for n in candidates if n.id != old]
        backup = cluster.backup
        if backup is not None and backup != old and any(n.id == backup for n in others):
            out.ch = backup
        else:
            out.ch, _ = elect(others, weights, t)
        if out.ch is None and reason is ChChangeReason.CH_OVERLOADED:
            # nobody to hand over to
            out.ch = old
        out.backup = elect((n for n in candidates if n.id != out.ch), weights, t)[0]
    if out.ch is not None and out.ch != old:
        nodes[out.ch].ch_count += 1
    return out


def check_overload(cluster: ClusterState, reservations: Iterable[Reservation], threshold: int) -> bool:
    if threshold < 1:
        raise DomainError("overload threshold must be >= 1")
    if cluster.ch is None:
        return False
    load = sum(1 for r in reservations if r.state.holds and cluster.ch in r.path.node_path)
    return load > threshold


def maintain(
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    cmap: ClusterMap,
    grid: GridConfig,
    weights: ElectionWeights,
    t: float,
    election_period_elapsed: bool = False,
) -> tuple[ClusterMap, MaintenanceReport]:
    out = cmap.copy()
    report = MaintenanceReport()

    # dead nodes leave their cluster; their roles are handled below
    for zone in out:
        cluster = out[zone]
        for n in sorted(cluster.members):
            if not nodes[n].alive:
                cluster.members.discard(n)
                report.removed_nodes.append((n, zone))

    # re-register nodes whose position now lies in another zone
    registered = out.registered_zones()
    actual = zones_of((nodes[n] for n in sorted(nodes) if nodes[n].alive), grid)
    for nid in actual:
        before = registered.get(nid)
        if before != actual[nid]:
            if before is not None:
                out[before].members.discard(nid)
            out[actual[nid]].members.add(nid)
            report.moved_nodes.append((nid, before, actual[nid]))

    gateways = gateway_nodes(nodes, links, actual)
    for zone in out:
        cluster = out[zone]
        now = gateways & cluster.members
        for n in sorted(cluster.gateways - now):
            report.gateway_changes.append((n, zone, False))
        for n in sorted(now - cluster.gateways):
            report.gateway_changes.append((n, zone, True))
        cluster.gateways = now

    for zone in out:
        cluster = out[zone]
        old = cluster.ch
        reason = None
        if old is not None:
            if not nodes[old].alive:
                reason = ChChangeReason.CH_FAILED
            elif old not in cluster.members:
                reason = ChChangeReason.CH_LEFT_CLUSTER
            elif election_period_elapsed:
                reason = ChChangeReason.ELECTION_PERIOD_ENDED
        if reason is not None:
            cluster = out.clusters[zone] = replace_ch(cluster, nodes, weights, t, reason)
            if cluster.ch != old:
                report.ch_changes.append((zone, old, cluster.ch, reason))
        elif old is None and cluster.members:
            cluster.ch, cluster.backup = elect(_alive_members(cluster, nodes), weights, t)
            nodes[cluster.ch].ch_count += 1
            report.ch_formations.append((zone, cluster.ch))
        _fix_backup(cluster, nodes, weights, t)
    return out, report


def _fix_backup(cluster: ClusterState, nodes, weights: ElectionWeights, t: float) -> None:
    b = cluster.backup
    valid = b is not None and b != cluster.ch and b in cluster.members and nodes[b].alive
    if valid:
        return
    rest = [n for n in _alive_members(cluster, nodes) if n.id != cluster.ch]
    cluster.backup = elect(rest, weights, t)[0]
