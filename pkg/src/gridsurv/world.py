"""Geometry of the simulated world: grid zones, node kinematics, unit-disk links."""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from gridsurv.errors import DomainError

NodeId = int


@dataclass(frozen=True)
class GridConfig:
    world_width: float
    world_height: float
    rows: int
    cols: int

    def __post_init__(self):
        if not (self.world_width > 0 and self.world_height > 0):
            raise DomainError("world dimensions must be positive")
        if self.rows < 1 or self.cols < 1:
            raise DomainError("grid needs at least one row and one column")

    @property
    def cell_height(self) -> float:
        return self.world_height / self.rows

    @property
    def cell_width(self) -> float:
        return self.world_width / self.cols

    def zones(self) -> list[ZoneId]:
        return [ZoneId(r, c) for r in range(self.rows) for c in range(self.cols)]

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x < self.world_width and 0 <= y < self.world_height


class ZoneId(NamedTuple):
    row: int
    col: int

    def __str__(self) -> str:
        return f"{self.row}:{self.col}"


@dataclass
class NodeState:
    id: NodeId
    x: float
    y: float
    waypoint: tuple[float, float]
    speed: float
    radio_range: float
    battery: float = 1.0
    computation: float = 1.0
    ch_count: int = 0
    alive: bool = True

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def zone_of(position: tuple[float, float], grid: GridConfig) -> ZoneId:
    x, y = position
    if not grid.contains(x, y):
        raise DomainError(f"position {position} outside {grid.world_width}x{grid.world_height} world")
    # min() guards float rounding of x / cell_width up to cols for x just below width
    row = min(math.floor(y / grid.cell_height), grid.rows - 1)
    col = min(math.floor(x / grid.cell_width), grid.cols - 1)
    return ZoneId(row, col)


def zones_of(nodes: Iterable[NodeState], grid: GridConfig) -> dict[NodeId, ZoneId]:
    """``zone_of`` for many nodes at once, keyed by node id."""
    nodes = list(nodes)
    if not nodes:
        return {}
    xy = np.array([(n.x, n.y) for n in nodes], dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    inside = (x >= 0) & (x < grid.world_width) & (y >= 0) & (y < grid.world_height)
    if not inside.all():
        bad = nodes[int(np.flatnonzero(~inside)[0])]
        zone_of(bad.position, grid)  # raises with the usual message
    rows = np.minimum(np.floor(y / grid.cell_height), grid.rows - 1).astype(np.int64)
    cols = np.minimum(np.floor(x / grid.cell_width), grid.cols - 1).astype(np.int64)
    cells = {}
    out = {}
    for n, r, c in zip(nodes, rows.tolist(), cols.tolist()):
        z = cells.get((r, c))
        if z is None:
            z = cells[(r, c)] = ZoneId(r, c)
        out[n.id] = z
    return out


def link_key(u: NodeId, v: NodeId) -> tuple[NodeId, NodeId]:
    return (u, v) if u < v else (v, u)


class Link(NamedTuple):
    """Read-only snapshot of one link's ledger entry."""

    capacity: float
    reserved: float = 0.0

    @property
    def residual(self) -> float:
        return self.capacity - self.reserved


# reserved totals closer to zero than this are snapped to exactly zero
_LEDGER_EPS = 1e-9


class LinkSet:
    """Undirected links with a per-link bandwidth ledger.

    Links are stored once under ``(min_id, max_id)``; every query accepts
    either argument order. Storage is a sorted neighbor list per node plus
    sparse maps: capacities are kept only where they differ from the
    shared base capacity, reservations only where nonzero.
    """

    def __init__(self):
        self._nbrs: dict[NodeId, list[NodeId]] = {}
        self._count = 0
        self._base: float | None = None
        self._capx: dict[tuple[NodeId, NodeId], float] = {}
        self._res: dict[tuple[NodeId, NodeId], float] = {}
        # (len, 2) sorted key array, rebuilt on demand after an add
        self._arr: np.ndarray | None = None

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[NodeId, NodeId]], capacity: float) -> LinkSet:
        out = cls()
        out._base = capacity
        for u, v in pairs:
            out.add(u, v, capacity)
        return out

    def _has(self, u: NodeId, v: NodeId) -> bool:
        vs = self._nbrs.get(u)
        if not vs:
            return False
        i = bisect.bisect_left(vs, v)
        return i < len(vs) and vs[i] == v

    def _key(self, u: NodeId, v: NodeId) -> tuple[NodeId, NodeId]:
        """Normalized key of an existing link; KeyError otherwise."""
        key = (u, v) if u < v else (v, u)
        if not self._has(u, v):
            raise KeyError(key)
        return key

    def _set_cap(self, key: tuple[NodeId, NodeId], capacity: float) -> None:
        if self._base is None:
            self._base = capacity
        if capacity == self._base:
            self._capx.pop(key, None)
        else:
            self._capx[key] = capacity

    def pair_array(self) -> np.ndarray:
        """``(len(self), 2)`` int array of link keys in ascending order; read-only."""
        if self._arr is None:
            arr = np.array(list(self), dtype=np.int64).reshape(-1, 2)
            arr.flags.writeable = False
            self._arr = arr
        return self._arr

    def add(self, u: NodeId, v: NodeId, capacity: float, reserved: float = 0.0) -> None:
        if u == v:
            raise DomainError("self-links are not allowed")
        key = link_key(u, v)
        if not self._has(u, v):
            bisect.insort(self._nbrs.setdefault(u, []), v)
            bisect.insort(self._nbrs.setdefault(v, []), u)
            self._count += 1
            self._arr = None
        self._set_cap(key, capacity)
        if reserved:
            self._res[key] = reserved
        else:
            self._res.pop(key, None)

    def remove(self, u: NodeId, v: NodeId) -> bool:
        if not self._has(u, v):
            return False
        key = link_key(u, v)
        for a, b in ((u, v), (v, u)):
            vs = self._nbrs[a]
            vs.remove(b)
            if not vs:
                del self._nbrs[a]
        self._count -= 1
        self._capx.pop(key, None)
        self._res.pop(key, None)
        if self._arr is not None:
            arr = self._arr[(self._arr[:, 0] != key[0]) | (self._arr[:, 1] != key[1])]
            arr.flags.writeable = False
            self._arr = arr
        return True

    def get(self, u: NodeId, v: NodeId) -> Link | None:
        if not self._has(u, v):
            return None
        key = link_key(u, v)
        return Link(self._capx.get(key, self._base), self._res.get(key, 0.0))

    def capacity(self, u: NodeId, v: NodeId) -> float:
        return self._capx.get(self._key(u, v), self._base)

    def reserved(self, u: NodeId, v: NodeId) -> float:
        return self._res.get(link_key(u, v), 0.0)

    def residual(self, u: NodeId, v: NodeId) -> float:
        key = self._key(u, v)
        return self._capx.get(key, self._base) - self._res.get(key, 0.0)

    def set_capacity(self, u: NodeId, v: NodeId, capacity: float) -> None:
        self._set_cap(self._key(u, v), capacity)

    def add_reserved(self, u: NodeId, v: NodeId, amount: float) -> None:
        key = self._key(u, v)
        total = self._res.get(key, 0.0) + amount
        if abs(total) < _LEDGER_EPS:
            self._res.pop(key, None)
        else:
            self._res[key] = total

    def __contains__(self, pair) -> bool:
        u, v = pair
        return self._has(u, v)

    def __len__(self) -> int:
        return self._count

    def __iter__(self) -> Iterator[tuple[NodeId, NodeId]]:
        """Link keys in ascending order."""
        nbrs = self._nbrs
        for u in sorted(nbrs):
            vs = nbrs[u]
            for v in vs[bisect.bisect_right(vs, u):]:
                yield (u, v)

    def items(self) -> Iterator[tuple[tuple[NodeId, NodeId], Link]]:
        capx, res, base = self._capx, self._res, self._base
        for key in self:
            yield key, Link(capx.get(key, base), res.get(key, 0.0))

    def pairs_with_residual(self, min_residual: float) -> list[tuple[NodeId, NodeId]]:
        return [k for k, link in self.items() if link.residual >= min_residual]

    def held(self) -> dict[tuple[NodeId, NodeId], float]:
        """Links carrying a nonzero reservation."""
        return dict(self._res)

    def neighbors(self, u: NodeId) -> list[NodeId]:
        """Neighbors of ``u`` in ascending id order; the list must not be mutated."""
        return self._nbrs.get(u, [])

    def has_node(self, u: NodeId) -> bool:
        return u in self._nbrs

    @property
    def base_capacity(self) -> float | None:
        """Capacity shared by every link not listed in ``special_pairs``."""
        return self._base

    def special_pairs(self) -> set[tuple[NodeId, NodeId]]:
        """Links whose residual may differ from the base capacity."""
        return set(self._capx).union(self._res)

    def max_capacity(self) -> float:
        caps = list(self._capx.values())
        if self._count > len(self._capx) and self._base is not None:
            caps.append(self._base)
        return max(caps, default=0.0)

    def pairs_below(self, min_residual: float) -> list[tuple[NodeId, NodeId]]:
        """Links whose residual is under ``min_residual``."""
        if self._base is not None and self._base < min_residual:
            return [k for k, link in self.items() if link.residual < min_residual]
        capx, res, base = self._capx, self._res, self._base
        return sorted(
            k for k in self.special_pairs() if capx.get(k, base) - res.get(k, 0.0) < min_residual
        )

    def pairs(self) -> set[tuple[NodeId, NodeId]]:
        return set(self)

    def total_capacity(self) -> float:
        extra = sorted(self._capx.values())
        plain = self._count - len(extra)
        return float((self._base * plain if plain else 0.0) + sum(extra))

    def total_reserved(self) -> float:
        return float(sum(self._res[k] for k in sorted(self._res)))

    def copy(self) -> LinkSet:
        out = LinkSet()
        out._nbrs = {u: list(vs) for u, vs in self._nbrs.items()}
        out._count = self._count
        out._base = self._base
        out._capx = dict(self._capx)
        out._res = dict(self._res)
        out._arr = self._arr
        return out

    def ledger(self) -> dict[tuple[NodeId, NodeId], float]:
        return {k: self._res.get(k, 0.0) for k in self}

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinkSet):
            return NotImplemented
        return dict(self.items()) == dict(other.items())

    def __repr__(self) -> str:
        return f"LinkSet({self._count} links)"


def links_of(nodes: Iterable[NodeState], r: float, capacity: float = 1.0) -> LinkSet:
    """Unit-disk links between distinct alive nodes at distance <= r."""
    empty = LinkSet()
    empty._base = capacity
    alive = sorted((n for n in nodes if n.alive), key=lambda n: n.id)
    if len(alive) < 2:
        return empty
    pts = np.array([(n.x, n.y) for n in alive], dtype=float)
    # the KD-tree only proposes candidates; the distance test decides
    cand = cKDTree(pts).query_pairs(r * (1 + 1e-9) + 1e-12, output_type="ndarray")
    if len(cand) == 0:
        return empty
    d = np.hypot(*(pts[cand[:, 0]] - pts[cand[:, 1]]).T)
    keep = d <= r
    # settle pairs within rounding distance of r with the scalar formula
    near = np.abs(d - r) <= 1e-9 * max(r, 1.0)
    for k in np.flatnonzero(near):
        i, j = cand[k]
        keep[k] = math.dist(pts[i], pts[j]) <= r
    ids = np.array([n.id for n in alive], dtype=np.int64)
    # ids ascend with the index and query_pairs yields i < j, so each row is (low, high)
    lo, hi = ids[cand[keep, 0]], ids[cand[keep, 1]]
    # sort pairs by an encoded (low, high) key
    scale = int(ids[-1]) + 1
    enc = np.sort(lo * scale + hi)
    if len(enc) == 0:
        return empty
    lo, hi = enc // scale, enc % scale
    out = LinkSet()
    out._base = capacity
    out._count = len(enc)
    arr = np.stack([lo, hi], axis=1)
    arr.flags.writeable = False
    out._arr = arr
    # both directions, grouped by the first endpoint and sorted within a group
    both = np.sort(np.concatenate([enc, hi * scale + lo]))
    heads = both // scale
    starts = np.flatnonzero(np.diff(heads)) + 1
    tails = (both % scale).tolist()
    bounds = [0] + starts.tolist() + [len(tails)]
    firsts = heads[bounds[:-1]].tolist()
    out._nbrs = {u: tails[bounds[i]:bounds[i + 1]] for i, u in enumerate(firsts)}
    return out


def _draw_point(grid: GridConfig, rng: random.Random) -> tuple[float, float]:
    x = rng.random() * grid.world_width
    y = rng.random() * grid.world_height
    return _clamp(x, y, grid)


def _clamp(x: float, y: float, grid: GridConfig) -> tuple[float, float]:
    x = min(max(x, 0.0), math.nextafter(grid.world_width, 0.0))
    y = min(max(y, 0.0), math.nextafter(grid.world_height, 0.0))
    return x, y


def _clone(n: NodeState) -> NodeState:
    # shallow copy without the dataclass __init__ round trip
    m = object.__new__(NodeState)
    m.__dict__.update(n.__dict__)
    return m


def step_mobility(
    nodes: Iterable[NodeState],
    dt: float,
    rng: random.Random,
    grid: GridConfig,
    speed_range: tuple[float, float],
) -> list[NodeState]:
    """Advance every node along its random-waypoint leg for ``dt`` seconds.

    A node that reaches its waypoint stops there for the rest of the step
    and draws a fresh waypoint and speed. Nodes are visited in id order so
    the rng stream is reproducible. Dead nodes do not move.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    v_min, v_max = speed_range
    x_hi = math.nextafter(grid.world_width, 0.0)
    y_hi = math.nextafter(grid.world_height, 0.0)
    out = []
    for n in sorted(nodes, key=lambda n: n.id):
        if not n.alive or n.speed <= 0:
            out.append(_clone(n))
            continue
        wx, wy = n.waypoint
        dx, dy = wx - n.x, wy - n.y
        dist = math.hypot(dx, dy)
        travel = n.speed * dt
        if travel >= dist:
            waypoint = _draw_point(grid, rng)
            speed = rng.uniform(v_min, v_max)
            m = _clone(n)
            m.x, m.y, m.waypoint, m.speed = wx, wy, waypoint, speed
        else:
            f = travel / dist
            m = _clone(n)
            # same bounds as _clamp, inlined for the hot loop
            m.x = min(max(n.x + dx * f, 0.0), x_hi)
            m.y = min(max(n.y + dy * f, 0.0), y_hi)
        out.append(m)
    return out


def random_nodes(
    count: int,
    grid: GridConfig,
    rng: random.Random,
    radio_range: float,
    speed_range: tuple[float, float] = (0.0, 0.0),
    battery_range: tuple[float, float] = (0.5, 1.0),
    computation_range: tuple[float, float] = (0.5, 1.0),
) -> list[NodeState]:
    nodes = []
    for i in range(count):
        x, y = _draw_point(grid, rng)
        waypoint = _draw_point(grid, rng)
        nodes.append(
            NodeState(
                id=i,
                x=x,
                y=y,
                waypoint=waypoint,
                speed=rng.uniform(*speed_range),
                radio_range=radio_range,
                battery=rng.uniform(*battery_range),
                computation=rng.uniform(*computation_range),
            )
        )
    return nodes
