"""Flow admission, bandwidth ledger bookkeeping and reservation repair.

The LinkSet passed in is the ledger: admit, release and repair mutate the
``reserved`` field of its links in place.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from gridsurv.clustering import ClusterMap
from gridsurv.errors import DomainError
from gridsurv.routing import ClusterConnectivityGraph, RoutePath, RoutingStats, route
from gridsurv.world import LinkSet, NodeId, NodeState

# Slack for float ledger arithmetic; demands are expected to be O(1..1e6).
EPS = 1e-9


@dataclass(frozen=True)
class FlowRequest:
    flow_id: str
    src: NodeId
    dst: NodeId
    demand: float
    start: float = 0.0
    duration: float = math.inf

    def __post_init__(self):
        if not self.demand > 0:
            raise DomainError(f"flow {self.flow_id}: demand must be positive")


class ReservationState(enum.Enum):
    ACTIVE = "Active"
    REPAIRED = "Repaired"
    FAILED = "Failed"
    RELEASED = "Released"

    @property
    def holds(self) -> bool:
        return self in (ReservationState.ACTIVE, ReservationState.REPAIRED)


@dataclass
class Reservation:
    flow: FlowRequest
    path: RoutePath | None
    state: ReservationState = ReservationState.ACTIVE
    repair_count: int = 0

    @property
    def flow_id(self) -> str:
        return self.flow.flow_id


@dataclass(frozen=True)
class Rejection:
    flow: FlowRequest
    reason: str  # "no-route" | "insufficient-bandwidth"


class ViolationKind(enum.Enum):
    DEAD_NODE = "dead-node"
    MISSING_LINK = "missing-link"
    OVERBOOKED = "overbooked"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    element: tuple[NodeId, ...]

    def __str__(self) -> str:
        return f"{self.kind.value}:{'-'.join(map(str, self.element))}"


def _reserve(links: LinkSet, path: RoutePath, amount: float) -> None:
    for u, v in path.links():
        links.add_reserved(u, v, amount)


def _unreserve(links: LinkSet, path: RoutePath, amount: float) -> None:
    for u, v in path.links():
        # a vanished link took its holdings with it
        if (u, v) in links:
            links.add_reserved(u, v, -amount)


def admit(
    request: FlowRequest,
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    cmap: ClusterMap,
    zone_graph: ClusterConnectivityGraph,
    stats: RoutingStats | None = None,
) -> Reservation | Rejection:
    for end in (request.src, request.dst):
        if end not in nodes or not nodes[end].alive or cmap.zone_with(end) is None:
            return Rejection(request, "no-route")
    path = route(
        request.src, request.dst, nodes, links, cmap, zone_graph, request.demand - EPS, stats
    )
    if path is None:
        reachable = route(request.src, request.dst, nodes, links, cmap, zone_graph, 0.0)
        return Rejection(request, "insufficient-bandwidth" if reachable else "no-route")
    _reserve(links, path, request.demand)
    return Reservation(request, path)


def release(res: Reservation, links: LinkSet) -> tuple[Reservation, LinkSet]:
    if not res.state.holds:
        raise DomainError(f"flow {res.flow_id} is {res.state.value}, nothing to release")
    _unreserve(links, res.path, res.flow.demand)
    res.state = ReservationState.RELEASED
    return res, links


def path_violation(
    res: Reservation, nodes: Mapping[NodeId, NodeState], links: LinkSet
) -> Violation | None:
    """First invalid element along the path, walking from the source.

    Within a hop a dead endpoint is reported ahead of the link it took down.
    """
    path = res.path.node_path

    def dead(n):
        node = nodes.get(n)
        return node is None or not node.alive

    if dead(path[0]):
        return Violation(ViolationKind.DEAD_NODE, (path[0],))
    for u, v in zip(path, path[1:]):
        if dead(v):
            return Violation(ViolationKind.DEAD_NODE, (v,))
        link = links.get(u, v)
        if link is None:
            return Violation(ViolationKind.MISSING_LINK, (u, v))
        if link.reserved > link.capacity + EPS:
            return Violation(ViolationKind.OVERBOOKED, (u, v))
    return None


def validate_paths(
    reservations: Iterable[Reservation], nodes: Mapping[NodeId, NodeState], links: LinkSet
) -> list[tuple[str, Violation]]:
    out = []
    for res in sorted(reservations, key=lambda r: r.flow_id):
        if not res.state.holds:
            continue
        violation = path_violation(res, nodes, links)
        if violation is not None:
            out.append((res.flow_id, violation))
    return out


def repair(
    res: Reservation,
    nodes: Mapping[NodeId, NodeState],
    links: LinkSet,
    cmap: ClusterMap,
    zone_graph: ClusterConnectivityGraph,
    stats: RoutingStats | None = None,
) -> Reservation:
    """Reroute a broken reservation from its source.

    Old holdings are returned before the new route is searched, so the
    flow may reuse its own surviving links. On failure nothing is held.
    """
    if not res.state.holds:
        raise DomainError(f"flow {res.flow_id} is {res.state.value}, cannot repair")
    if path_violation(res, nodes, links) is None:
        raise DomainError(f"flow {res.flow_id} has a valid path, nothing to repair")
    _unreserve(links, res.path, res.flow.demand)
    # the freed links may have been what capped their zone edges
    zone_graph.refresh_residuals(links, res.path.links())
    outcome = None
    src, dst = res.flow.src, res.flow.dst
    endpoints_ok = all(
        n in nodes and nodes[n].alive and cmap.zone_with(n) is not None for n in (src, dst)
    )
    if endpoints_ok:
        outcome = admit(res.flow, nodes, links, cmap, zone_graph, stats)
    if isinstance(outcome, Reservation):
        res.path = outcome.path
        res.state = ReservationState.REPAIRED
        res.repair_count += 1
    else:
        res.state = ReservationState.FAILED
    return res


@dataclass
class Ledger:
    """Independent bookkeeping of who holds what; used by invariant sweeps."""

    holdings: dict[tuple[NodeId, NodeId], float] = field(default_factory=dict)

    @classmethod
    def from_reservations(cls, reservations: Iterable[Reservation]) -> Ledger:
        out = cls()
        for res in reservations:
            if res.state.holds:
                for u, v in res.path.links():
                    key = (u, v) if u < v else (v, u)
                    out.holdings[key] = out.holdings.get(key, 0.0) + res.flow.demand
        return out


def conservation_problems(reservations: Iterable[Reservation], links: LinkSet) -> list[str]:
    expected = Ledger.from_reservations(reservations).holdings
    problems = []
    for key, reserved in links.ledger().items():
        want = expected.get(key, 0.0)
        if not math.isclose(reserved, want, abs_tol=1e-6):
            problems.append(f"link {key} reserved {reserved} != held {want}")
    return problems
