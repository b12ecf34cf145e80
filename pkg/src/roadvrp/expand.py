"""Recover road-network routes from complete-graph tours and repair capacity."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from . import assignroute
from .assignroute import CompleteModel, CompleteSolution, InfeasibleError, forbid_from_violations
from .congestion import capacity_violations
from .metrics import Vehicle, fleet_of
from .network import (
    CompleteProjection,
    EdgeKey,
    RoadNetwork,
    RouteError,
    RouteSequence,
    arrival_schedule,
    build_route_sequence,
)

__all__ = [
    "InfeasibleError",
    "NCSolution",
    "RepairLimitError",
    "RepairResult",
    "arrival_schedule",
    "recover",
    "repair_loop",
    "validate_nc_solution",
]

MAX_REPAIR_ROUNDS = 10


class RepairLimitError(RuntimeError):
    """The forbid-and-resolve loop did not clear capacity violations in time."""


@dataclass(frozen=True)
class NCSolution:
    assignment: Mapping[int, int]  # customer node -> vehicle
    routes: tuple[RouteSequence, ...]  # indexed by vehicle
    speeds: Mapping[tuple[int, EdgeKey], float] = field(default_factory=dict)

    def vehicle_speeds(self, q: int) -> dict[EdgeKey, float]:
        return {e: v for (qq, e), v in self.speeds.items() if qq == q}

    def arrivals(self, net: RoadNetwork) -> list[dict[tuple[int, int], float]]:
        lengths = {e.key: e.length for e in net.edges}
        return [arrival_schedule(seq, self.vehicle_speeds(seq.vehicle), lengths)[0] for seq in self.routes]

    @property
    def used_vehicles(self) -> int:
        return sum(1 for seq in self.routes if seq.edges)


def recover(sol: CompleteSolution, proj: CompleteProjection) -> tuple[dict[int, int], tuple[RouteSequence, ...]]:
    """Concatenate the stored shortest paths along every tour."""
    routes = []
    for q in range(len(sol.tours)):
        edges: list[EdgeKey] = []
        for pair in sol.tour_edges(q):
            edges.extend(proj.sp_edges[pair])
        routes.append(build_route_sequence(q, edges, proj.depot) if edges else RouteSequence(q, ()))
    return sol.assignment, tuple(routes)


@dataclass(frozen=True)
class RepairResult:
    solution: CompleteSolution
    assignment: dict[int, int]
    routes: tuple[RouteSequence, ...]
    forbidden: frozenset
    rounds: int


def repair_loop(
    proj: CompleteProjection,
    net: RoadNetwork,
    build_model: Callable[[frozenset], CompleteModel],
    counts: Mapping[EdgeKey, int],
    solver: Callable[[CompleteModel], CompleteSolution] = assignroute.solve,
    max_rounds: int = MAX_REPAIR_ROUNDS,
    forbidden: frozenset = frozenset(),
) -> RepairResult:
    """Solve, expand, check edge capacity, forbid and re-solve.

    ``build_model`` maps a forbidden set to the complete-graph model to solve.
    Raises :class:`InfeasibleError` when forbidding leaves no solution and
    :class:`RepairLimitError` when violations persist after ``max_rounds``.
    """
    caps = {e.key: e.kcap for e in net.edges}
    for rnd in range(1, max_rounds + 1):
        sol = solver(build_model(forbidden))
        assignment, routes = recover(sol, proj)
        violations = capacity_violations(routes, counts, caps)
        if not violations:
            return RepairResult(sol, assignment, routes, forbidden, rnd)
        delta = forbid_from_violations(violations, proj)
        if delta <= forbidden:
            raise RepairLimitError(f"round {rnd}: violations persist on edges already forbidden")
        forbidden = forbidden | delta
    raise RepairLimitError(f"capacity violations remain after {max_rounds} repair rounds")


def validate_nc_solution(
    sol: NCSolution,
    net: RoadNetwork,
    fleet: Sequence[Vehicle],
    counts: Mapping[EdgeKey, int],
    bounds: Mapping[EdgeKey, tuple[float, float]] | None = None,
) -> list[str]:
    """Full road-network constraint check; returns human-readable problems."""
    problems: list[str] = []
    m = len(sol.routes)
    vehicles = fleet_of(fleet, max(m, 1))
    cust_nodes = set(net.customer_nodes)
    for c in net.customers:
        q = sol.assignment.get(c.node)
        if q is None or not 0 <= q < m:
            problems.append(f"customer {c.node} not assigned to any vehicle")
    for node in sol.assignment:
        if node not in cust_nodes:
            problems.append(f"assignment names non-customer node {node}")

    lengths = {e.key: e.length for e in net.edges}
    for q, seq in enumerate(sol.routes):
        if seq.vehicle != q:
            problems.append(f"route {q} is labelled vehicle {seq.vehicle}")
        if not seq.edges:
            problems.append(f"vehicle {q} has an empty route")
            continue
        try:
            build_route_sequence(q, seq.edges, net.depot)
        except RouteError as exc:
            problems.append(f"vehicle {q}: {exc}")
            continue
        for e in seq.edges:
            if not net.has_edge(e):
                problems.append(f"vehicle {q} uses missing road edge {e}")
        flow: Counter = Counter()
        for a, b in seq.edges:
            flow[a] -= 1
            flow[b] += 1
        for node, bal in flow.items():
            if bal:
                problems.append(f"vehicle {q} breaks flow conservation at node {node}")
        mine = [n for n, owner in sol.assignment.items() if owner == q]
        heads = {b for _, b in seq.edges}
        for n in mine:
            if n not in heads:
                problems.append(f"vehicle {q} never visits its customer {n}")
        load = sum(net.customer(n).demand for n in mine if n in cust_nodes)
        if load > vehicles[q].capacity + 1e-9:
            problems.append(f"vehicle {q} load {load} exceeds capacity {vehicles[q].capacity}")
        speeds = {}
        for e in set(seq.edges):
            v = sol.speeds.get((q, e))
            if v is None:
                problems.append(f"vehicle {q} has no speed on {e}")
                continue
            speeds[e] = v
            if bounds is not None:
                lo, hi = bounds[e]
                if not (lo - 1e-9 <= v <= hi + 1e-9):
                    problems.append(f"vehicle {q} speed {v} on {e} outside [{lo}, {hi}]")
        if len(speeds) == len(set(seq.edges)):
            arr, _ = arrival_schedule(seq, speeds, lengths)
            times = [0.0]
            visits: Counter = Counter()
            for e in seq.edges:
                visits[e[1]] += 1
                times.append(arr[(e[1], visits[e[1]])])
            if any(b <= a for a, b in zip(times[:-1], times[1:])):
                problems.append(f"vehicle {q} arrival times are not increasing")

    caps = {e.key: e.kcap for e in net.edges}
    for viol in capacity_violations(sol.routes, counts, caps):
        problems.append(f"edge {viol.edge} carries {viol.load} vehicles, capacity {viol.cap}")
    return problems

