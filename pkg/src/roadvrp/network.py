"""Road-network model, shortest paths and ordered-route bookkeeping.

Node ids are the non-negative integers given in the instance; they are kept
as-is everywhere in the public API so reports read like the input.
"""

from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

EdgeKey = tuple[int, int]


class NetworkError(ValueError):
    """Raised for structurally unusable networks (unreachable pairs, bad ids)."""


class RouteError(ValueError):
    """Raised when an edge list does not form a depot-to-depot walk."""


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    length: float  # km
    vmin: float  # km/h
    vmax: float  # km/h
    kcap: int

    @property
    def key(self) -> EdgeKey:
        return (self.tail, self.head)


@dataclass(frozen=True)
class Customer:
    node: int
    demand: float = 0.0
    window_upper: float = float("inf")  # hours
    window_lower: float = 0.0  # stored, never used by any objective
    late_penalty: float = 0.0


@dataclass(frozen=True)
class Violation:
    rule: str
    where: object
    detail: str

    def __str__(self) -> str:
        return f"{self.rule}: {self.detail}"


@dataclass(frozen=True)
class RoadNetwork:
    nodes: tuple[int, ...]
    edges: tuple[Edge, ...]
    depot: int
    customers: tuple[Customer, ...]
    coords: Mapping[int, tuple[float, float]] | None = None
    _by_key: dict = field(init=False, repr=False, compare=False)
    _out: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "customers", tuple(self.customers))
        by_key = {}
        out = defaultdict(list)
        for e in self.edges:
            by_key.setdefault(e.key, e)
            out[e.tail].append(e)
        for tail in out:
            out[tail].sort(key=lambda e: e.head)
        object.__setattr__(self, "_by_key", by_key)
        object.__setattr__(self, "_out", dict(out))

    def edge(self, key: EdgeKey) -> Edge:
        try:
            return self._by_key[key]
        except KeyError:
            raise NetworkError(f"no edge {key}") from None

    def has_edge(self, key: EdgeKey) -> bool:
        return key in self._by_key

    def out_edges(self, node: int) -> list[Edge]:
        return self._out.get(node, [])

    @property
    def customer_nodes(self) -> tuple[int, ...]:
        return tuple(c.node for c in self.customers)

    def customer(self, node: int) -> Customer:
        for c in self.customers:
            if c.node == node:
                return c
        raise KeyError(node)


def _reachable(start: int, adjacency: Mapping[int, Iterable[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for w in adjacency.get(u, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def validate_network(net: RoadNetwork) -> list[Violation]:
    """Check every structural invariant; violations are returned, not raised."""
    out: list[Violation] = []
    nodes = set(net.nodes)
    if len(nodes) != len(net.nodes):
        out.append(Violation("duplicate node", None, "node ids must be unique"))
    for n in net.nodes:
        if not isinstance(n, int) or n < 0:
            out.append(Violation("node id", n, f"node id {n!r} is not a non-negative integer"))

    seen_keys: set[EdgeKey] = set()
    for e in net.edges:
        where = e.key
        if e.tail not in nodes or e.head not in nodes:
            out.append(Violation("unknown node", where, f"edge {where} references an unknown node"))
        if e.tail == e.head:
            out.append(Violation("self loop", where, f"edge {where} is a self loop"))
        if where in seen_keys:
            out.append(Violation("duplicate edge", where, f"edge {where} appears more than once"))
        seen_keys.add(where)
        if not e.length > 0:
            out.append(Violation("nonpositive length", where, f"edge {where} has length {e.length}"))
        if not (0 < e.vmin <= e.vmax):
            out.append(
                Violation("speed limits", where, f"edge {where} needs 0 < vmin <= vmax, got {e.vmin}, {e.vmax}")
            )
        if not (isinstance(e.kcap, int) and e.kcap >= 1):
            out.append(Violation("kcap", where, f"edge {where} has vehicle capacity {e.kcap!r} < 1"))

    if net.depot not in nodes:
        out.append(Violation("depot", net.depot, f"depot {net.depot} is not a node"))
    cust_seen: set[int] = set()
    for c in net.customers:
        if c.node not in nodes:
            out.append(Violation("customer", c.node, f"customer {c.node} is not a node"))
        if c.node == net.depot:
            out.append(Violation("customer", c.node, f"customer {c.node} coincides with the depot"))
        if c.node in cust_seen:
            out.append(Violation("customer", c.node, f"customer {c.node} listed twice"))
        cust_seen.add(c.node)
        if c.demand < 0:
            out.append(Violation("customer", c.node, f"customer {c.node} has negative demand"))
        if c.late_penalty < 0:
            out.append(Violation("customer", c.node, f"customer {c.node} has negative late penalty"))
        if c.window_upper < 0:
            out.append(Violation("customer", c.node, f"customer {c.node} has negative window"))

    if net.depot in nodes:
        fwd: dict[int, list[int]] = defaultdict(list)
        bwd: dict[int, list[int]] = defaultdict(list)
        for e in net.edges:
            fwd[e.tail].append(e.head)
            bwd[e.head].append(e.tail)
        from_depot = _reachable(net.depot, fwd)
        to_depot = _reachable(net.depot, bwd)
        for c in net.customers:
            if c.node not in nodes:
                continue
            if c.node not in from_depot:
                out.append(Violation("unreachable", c.node, f"customer {c.node} unreachable from depot"))
            if c.node not in to_depot:
                out.append(Violation("unreachable", c.node, f"depot unreachable from customer {c.node}"))
    return out


@dataclass(frozen=True)
class CompleteProjection:
    """Complete graph over depot + customers with stored shortest road paths."""

    nodes: tuple[int, ...]  # depot first
    d_sp: Mapping[EdgeKey, float]
    sp_edges: Mapping[EdgeKey, tuple[EdgeKey, ...]]

    @property
    def depot(self) -> int:
        return self.nodes[0]

    @property
    def pairs(self) -> list[EdgeKey]:
        return [(a, b) for a in self.nodes for b in self.nodes if a != b]

    def path_nodes(self, a: int, b: int) -> tuple[int, ...]:
        edges = self.sp_edges[(a, b)]
        return (a,) + tuple(h for _, h in edges)


def _lex_dijkstra(net: RoadNetwork, source: int) -> dict[int, tuple[float, tuple[int, ...]]]:
    # Keys (distance, node path) are totally ordered and extension-monotone
    # for positive lengths, so plain Dijkstra on them yields the
    # lexicographically smallest node sequence among shortest walks.
    best: dict[int, tuple[float, tuple[int, ...]]] = {source: (0.0, (source,))}
    done: set[int] = set()
    heap = [(0.0, (source,))]
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        for e in net.out_edges(u):
            if e.head in done:
                continue
            cand = (dist + e.length, path + (e.head,))
            cur = best.get(e.head)
            if cur is None or cand < cur:
                best[e.head] = cand
                heapq.heappush(heap, cand)
    return best


def shortest_paths(net: RoadNetwork) -> CompleteProjection:
    nodes = (net.depot,) + net.customer_nodes
    d_sp: dict[EdgeKey, float] = {}
    sp_edges: dict[EdgeKey, tuple[EdgeKey, ...]] = {}
    for a in nodes:
        tree = _lex_dijkstra(net, a)
        for b in nodes:
            if a == b:
                continue
            if b not in tree:
                raise NetworkError(f"node {b} is unreachable from node {a}")
            dist, path = tree[b]
            edges = tuple(zip(path[:-1], path[1:]))
            # recompute from the edge list so the stored length is its exact sum
            d_sp[(a, b)] = sum(net.edge(k).length for k in edges)
            sp_edges[(a, b)] = edges
    return CompleteProjection(nodes=nodes, d_sp=d_sp, sp_edges=sp_edges)


@dataclass(frozen=True)
class RouteSequence:
    """Ordered (possibly repeated) road edges of one vehicle, depot to depot."""

    vehicle: int
    edges: tuple[EdgeKey, ...]

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def counts(self) -> Counter:
        return Counter(self.edges)

    @property
    def first_traversal(self) -> dict[EdgeKey, int]:
        return {e: 1 for e in self.counts}

    @property
    def extra(self) -> dict[EdgeKey, int]:
        return {e: c - 1 for e, c in self.counts.items()}

    @property
    def node_sequence(self) -> tuple[int, ...]:
        if not self.edges:
            return ()
        return (self.edges[0][0],) + tuple(h for _, h in self.edges)


def build_route_sequence(vehicle: int, edge_list: Sequence[EdgeKey], depot: int) -> RouteSequence:
    edges = tuple((int(a), int(b)) for a, b in edge_list)
    if not edges or edges[0][0] != depot:
        raise RouteError("route must start at depot")
    for p in range(1, len(edges)):
        if edges[p - 1][1] != edges[p][0]:
            raise RouteError(f"broken chain at position {p + 1}: {edges[p - 1]} then {edges[p]}")
    if edges[-1][1] != depot:
        raise RouteError("route must end at depot")
    return RouteSequence(vehicle, edges)


def c1(seq: RouteSequence, p: int) -> EdgeKey:
    """The p-th edge of the sequence (1-based)."""
    if not 1 <= p <= len(seq):
        raise IndexError(f"position {p} outside 1..{len(seq)}")
    return seq.edges[p - 1]


def c2(seq: RouteSequence, n: int, p: int) -> int:
    """Arrivals at node ``n`` among the first ``p`` edges."""
    if not 1 <= p <= len(seq):
        raise IndexError(f"position {p} outside 1..{len(seq)}")
    return sum(1 for _, h in seq.edges[:p] if h == n)


def c3(sp_edges: Sequence[EdgeKey], e: EdgeKey) -> int:
    return sum(1 for x in sp_edges if tuple(x) == tuple(e))


def arrival_schedule(
    seq: RouteSequence, speeds: Mapping[EdgeKey, float], lengths: Mapping[EdgeKey, float]
) -> tuple[dict[tuple[int, int], float], dict[int, float]]:
    """Visit-indexed arrival times and first-arrival times along a route.

    Returns ``(arr, first)`` where ``arr[(node, i)]`` is the time of the i-th
    arrival at ``node`` (the depot start is ``(depot, 0)``) and ``first[node]``
    is ``arr[(node, 1)]``. No waiting happens at nodes.
    """
    arr: dict[tuple[int, int], float] = {}
    first: dict[int, float] = {}
    if not seq.edges:
        return arr, first
    visits: Counter = Counter()
    t = 0.0
    arr[(seq.edges[0][0], 0)] = 0.0
    for e in seq.edges:
        v = speeds[e]
        if not v > 0:
            raise ValueError(f"speed on {e} must be positive, got {v}")
        t += lengths[e] / v
        head = e[1]
        visits[head] += 1
        arr[(head, visits[head])] = t
        if visits[head] == 1:
            first[head] = t
    return arr, first
