"""Assignment-routing on the auxiliary complete graph with fixed speeds.

Every vehicle of the requested fleet must leave the depot, so each tour is
nonempty; each customer belongs to exactly one tour and tours visit nodes
at most once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .congestion import CapacityViolation
from .metrics import (
    NormalizationWeights,
    ObjectiveVector,
    Vehicle,
    WeightVector,
)
from .network import CompleteProjection, Customer, EdgeKey, RoadNetwork

ForbiddenEdges = frozenset  # of (vehicle, (n1, n2)) pairs on the complete graph

EXACT_THRESHOLD = 8
HEURISTIC_KICKS = 30
HEURISTIC_PATIENCE = 10  # stop after this many kicks without improvement
_TOL = 1e-12


class InfeasibleError(RuntimeError):
    """No complete-graph solution satisfies capacity, coverage and forbidding."""


@dataclass(frozen=True)
class CompleteSolution:
    depot: int
    tours: tuple[tuple[int, ...], ...]  # customer nodes per vehicle, depot omitted

    @property
    def assignment(self) -> dict[int, int]:
        return {n: q for q, tour in enumerate(self.tours) for n in tour}

    def tour_nodes(self, q: int) -> tuple[int, ...]:
        if not self.tours[q]:
            return ()
        return (self.depot,) + self.tours[q] + (self.depot,)

    def tour_edges(self, q: int) -> list[EdgeKey]:
        nodes = self.tour_nodes(q)
        return list(zip(nodes[:-1], nodes[1:]))


@dataclass
class CompleteModel:
    """Dense per-vehicle cost data for one fleet size and one speed field.

    Index 0 is the depot, index i >= 1 is ``customers[i - 1]``.
    """

    nodes: tuple[int, ...]
    dist: np.ndarray  # (n+1, n+1) km
    time: np.ndarray  # (m, n+1, n+1) h
    emis: np.ndarray  # (m, n+1, n+1) g
    demand: np.ndarray
    window: np.ndarray
    penalty: np.ndarray
    capacity: np.ndarray
    setup: np.ndarray
    alpha: np.ndarray
    wbar: np.ndarray
    forbidden: np.ndarray  # (m, n+1, n+1) bool

    @property
    def n(self) -> int:
        return len(self.nodes) - 1

    @property
    def m(self) -> int:
        return len(self.capacity)

    @property
    def depot(self) -> int:
        return self.nodes[0]

    def index(self, node: int) -> int:
        return self.nodes.index(node)

    def coef(self) -> np.ndarray:
        return self.alpha / self.wbar


def complete_edge_speed(
    proj: CompleteProjection, pair: EdgeKey, lengths: Mapping[EdgeKey, float], speed: Callable[[EdgeKey], float]
) -> float:
    """Length-weighted harmonic mean of road speeds along a stored path.

    With this speed the complete-edge travel time equals the road travel time.
    """
    t = sum(lengths[e] / speed(e) for e in proj.sp_edges[pair])
    return proj.d_sp[pair] / t


def build_complete_model(
    proj: CompleteProjection,
    net: RoadNetwork,
    vehicles: Sequence[Vehicle],
    alpha: WeightVector,
    wbar: NormalizationWeights,
    default_speeds: Mapping[EdgeKey, float],
    vehicle_speeds: Mapping[tuple[int, EdgeKey], float] | None = None,
    forbidden: Iterable = (),
) -> CompleteModel:
    nodes = proj.nodes
    n1 = len(nodes)
    m = len(vehicles)
    pos = {node: i for i, node in enumerate(nodes)}
    lengths = {e.key: e.length for e in net.edges}
    vehicle_speeds = vehicle_speeds or {}
    dist = np.zeros((n1, n1))
    time = np.zeros((m, n1, n1))
    emis = np.zeros((m, n1, n1))
    for (a, b), d in proj.d_sp.items():
        dist[pos[a], pos[b]] = d
    for q, veh in enumerate(vehicles):
        speed = lambda e, q=q: vehicle_speeds.get((q, e), default_speeds[e])  # noqa: E731
        for pair in proj.pairs:
            v = complete_edge_speed(proj, pair, lengths, speed)
            d = proj.d_sp[pair]
            i, j = pos[pair[0]], pos[pair[1]]
            time[q, i, j] = d / v
            emis[q, i, j] = d * float(veh.curve(v))
    fb = np.zeros((m, n1, n1), dtype=bool)
    for q, (a, b) in forbidden:
        if q < m:
            fb[q, pos[a], pos[b]] = True
    custs = [net.customer(node) for node in nodes[1:]]
    return CompleteModel(
        nodes=nodes,
        dist=dist,
        time=time,
        emis=emis,
        demand=np.array([c.demand for c in custs], dtype=float),
        window=np.array([c.window_upper for c in custs], dtype=float),
        penalty=np.array([c.late_penalty for c in custs], dtype=float),
        capacity=np.array([v.capacity for v in vehicles], dtype=float),
        setup=np.array([v.setup_cost for v in vehicles], dtype=float),
        alpha=alpha.as_array(),
        wbar=wbar.as_array(),
        forbidden=fb,
    )


def _tour_terms(model: CompleteModel, q: int, idx: Sequence[int]) -> tuple[float, float, float, float, float, float, int]:
    """Raw (TGE, TSC, TDT, dist, LAC, MAT, forbidden uses) of one tour given as model indices."""
    if not idx:
        return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    path = (0,) + tuple(idx) + (0,)
    tge = tdt = dist = lac = t = mat = 0.0
    bad = 0
    for a, b in zip(path[:-1], path[1:]):
        leg = model.time[q, a, b]
        tge += model.emis[q, a, b]
        tdt += leg
        dist += model.dist[a, b]
        bad += bool(model.forbidden[q, a, b])
        t += leg
        if b:
            lac += max(t - model.window[b - 1], 0.0) * model.penalty[b - 1]
            mat = t
    return (tge, float(model.setup[q]), tdt, dist, lac, mat, bad)


def complete_terms(sol: CompleteSolution, model: CompleteModel) -> ObjectiveVector:
    totals = [0.0] * 6
    for q, tour in enumerate(sol.tours):
        tge, tsc, tdt, dist, lac, mat, _ = _tour_terms(model, q, [model.index(c) for c in tour])
        totals[0] += tge
        totals[1] += tsc
        totals[2] += tdt
        totals[3] = max(totals[3], dist)
        totals[4] += lac
        totals[5] = max(totals[5], mat)
    return ObjectiveVector(*totals)


def evaluate_complete(sol: CompleteSolution, model: CompleteModel) -> float:
    return float(complete_terms(sol, model).as_array() @ model.coef())


def check_solution(sol: CompleteSolution, model: CompleteModel) -> list[str]:
    """Independent constraint check of a complete-graph solution."""
    problems = []
    if len(sol.tours) != model.m:
        problems.append(f"{len(sol.tours)} tours for {model.m} vehicles")
    seen: list[int] = [c for tour in sol.tours for c in tour]
    for c in model.nodes[1:]:
        k = seen.count(c)
        if k != 1:
            problems.append(f"customer {c} served {k} times")
    for c in seen:
        if c not in model.nodes[1:]:
            problems.append(f"unknown customer {c}")
    for q, tour in enumerate(sol.tours):
        if not tour:
            problems.append(f"vehicle {q} unused")
            continue
        idx = [model.index(c) for c in tour if c in model.nodes]
        load = float(sum(model.demand[i - 1] for i in idx))
        if q < model.m and load > model.capacity[q] + 1e-9:
            problems.append(f"vehicle {q} load {load} exceeds capacity {model.capacity[q]}")
        path = [0] + idx + [0]
        if q < model.m and any(model.forbidden[q, a, b] for a, b in zip(path[:-1], path[1:])):
            problems.append(f"vehicle {q} uses a forbidden edge")
    return problems


def forbid_from_violations(violations: Iterable[CapacityViolation], proj: CompleteProjection) -> frozenset:
    """Complete edges to exclude, per offending vehicle, for overloaded road edges."""
    out = set()
    for viol in violations:
        for pair in proj.pairs:
            if viol.edge in proj.sp_edges[pair]:
                for q in viol.vehicles:
                    out.add((q, pair))
    return frozenset(out)


def _check_reachable(model: CompleteModel) -> None:
    n1 = model.n + 1
    for c in range(1, n1):
        ok = False
        for q in range(model.m):
            allowed = ~model.forbidden[q]
            np.fill_diagonal(allowed, False)
            fwd = _reach(allowed, 0)
            bwd = _reach(allowed.T, 0)
            if c in fwd and c in bwd:
                ok = True
                break
        if not ok:
            raise InfeasibleError(f"customer {model.nodes[c]} cut off from the depot for every vehicle")


def _reach(adj: np.ndarray, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for w in np.flatnonzero(adj[u]):
            w = int(w)
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def _precheck(model: CompleteModel) -> None:
    if model.m < 1:
        raise InfeasibleError("need at least one vehicle")
    if model.m > model.n:
        raise InfeasibleError(f"{model.m} vehicles cannot all be used with {model.n} customers")
    if model.demand.sum() > model.capacity.sum() + 1e-9:
        raise InfeasibleError("total demand exceeds total fleet capacity")
    if np.any(model.demand > model.capacity.max() + 1e-9):
        raise InfeasibleError("a customer demand exceeds every vehicle capacity")
    _check_reachable(model)


# ---------------------------------------------------------------- exact


@lru_cache(maxsize=None)
def _perm_table(k: int) -> np.ndarray:
    return np.array(list(permutations(range(k))), dtype=np.int64).reshape(-1, k)


def _front(S: np.ndarray, D: np.ndarray, M: np.ndarray) -> list[int]:
    """Indices of non-dominated (S, D, M) rows; among equal rows the first wins."""
    order = np.lexsort((np.arange(len(S)), M, D, S))
    if not (D.any() or M.any()):
        return [int(order[0])]
    alive = np.ones(len(S), dtype=bool)
    kept: list[int] = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(int(i))
        # everything no better in all three is dominated (or a duplicate)
        alive &= ~((S >= S[i]) & (D >= D[i]) & (M >= M[i]))
    return kept


def _candidates(model: CompleteModel, q: int, members: list[int], coef: np.ndarray):
    k = len(members)
    perms = np.asarray(members, dtype=np.int64)[_perm_table(k)]
    zeros = np.zeros((len(perms), 1), dtype=np.int64)
    full = np.hstack([zeros, perms, zeros])
    a, b = full[:, :-1], full[:, 1:]
    legs = model.time[q][a, b]
    cum = np.cumsum(legs, axis=1)
    arr = cum[:, :k]
    late = np.clip(arr - model.window[perms - 1], 0.0, None) * model.penalty[perms - 1]
    lac = late.sum(axis=1)
    mat = arr[:, -1]
    tge = model.emis[q][a, b].sum(axis=1)
    dist = model.dist[a, b].sum(axis=1)
    tdt = cum[:, -1]
    ok = ~model.forbidden[q][a, b].any(axis=1)
    if not ok.any():
        return []
    S = coef[0] * tge + coef[1] * model.setup[q] + coef[2] * tdt + coef[4] * lac
    D = coef[3] * dist
    M = coef[5] * mat
    S, D, M, perms = S[ok], D[ok], M[ok], perms[ok]
    return [(float(S[i]), float(D[i]), float(M[i]), tuple(int(x) for x in perms[i])) for i in _front(S, D, M)]


def _prune(labels: list) -> list:
    labels.sort(key=lambda x: (x[0], x[1], x[2]))
    kept: list = []
    for lab in labels:
        if any(k[0] <= lab[0] and k[1] <= lab[1] and k[2] <= lab[2] for k in kept):
            continue
        kept.append(lab)
    return kept


def solve_exact(model: CompleteModel, threshold: int = EXACT_THRESHOLD) -> CompleteSolution:
    """Globally optimal tours by per-subset enumeration and a DP over vehicles.

    For each (vehicle, customer subset) only the tours that are Pareto-minimal
    in (additive cost, distance, last arrival) are kept; the two max terms are
    then combined across vehicles exactly.
    """
    n, m = model.n, model.m
    if n > threshold:
        raise ValueError(f"{n} customers exceed the exact threshold {threshold}")
    _precheck(model)
    coef = model.coef()
    full = (1 << n) - 1
    cands: list[dict[int, list]] = []
    for q in range(m):
        per = {}
        for mask in range(1, full + 1):
            members = [i + 1 for i in range(n) if mask >> i & 1]
            if model.demand[[i - 1 for i in members]].sum() > model.capacity[q] + 1e-9:
                continue
            c = _candidates(model, q, members, coef)
            if c:
                per[mask] = c
        cands.append(per)

    # labels: (additive, max dist term, max arrival term, chosen tours)
    layer: dict[int, list] = {0: [(0.0, 0.0, 0.0, ())]}
    for q in range(m):
        left_after = m - q - 1
        nxt: dict[int, list] = {}
        for mask, labels in layer.items():
            rest = full ^ mask
            sub = rest
            while sub:
                if bin(rest ^ sub).count("1") >= left_after and sub in cands[q]:
                    if q < m - 1 or sub == rest:
                        bucket = nxt.setdefault(mask | sub, [])
                        for s, d, mm, chosen in labels:
                            for cs, cd, cm, tour in cands[q][sub]:
                                bucket.append((s + cs, max(d, cd), max(mm, cm), chosen + (tour,)))
                sub = (sub - 1) & rest
        layer = {mask: _prune(labels) for mask, labels in nxt.items()}
    finals = layer.get(full, [])
    if not finals:
        raise InfeasibleError("no assignment satisfies capacity and forbidden edges")
    scored = [(s + d + mm, chosen) for s, d, mm, chosen in finals]
    best = min(v for v, _ in scored)
    tol = _TOL * max(1.0, abs(best))
    chosen = min(c for v, c in scored if v <= best + tol)
    tours = tuple(tuple(model.nodes[i] for i in tour) for tour in chosen)
    return CompleteSolution(model.depot, tours)


# ---------------------------------------------------------------- heuristic


class _Evaluator:
    def __init__(self, model: CompleteModel):
        self.model = model
        self.coef = model.coef()
        self._memo: dict = {}
        # loads never bind without demand or with unlimited vehicles
        self.free = not np.any(model.demand > 0) or bool(np.all(np.isinf(model.capacity)))

    def tour(self, q: int, tour: tuple[int, ...]) -> tuple[float, float, float, int]:
        key = (q, tour)
        hit = self._memo.get(key)
        if hit is None:
            tge, tsc, tdt, dist, lac, mat, bad = _tour_terms(self.model, q, tour)
            c = self.coef
            s = c[0] * tge + c[1] * tsc + c[2] * tdt + c[4] * lac
            hit = (s, c[3] * dist, c[5] * mat, bad)
            self._memo[key] = hit
        return hit

    def total(self, tours: Sequence[tuple[int, ...]]) -> tuple[int, float]:
        return self.combine([self.tour(q, t) for q, t in enumerate(tours)])

    @staticmethod
    def combine(vals: Sequence[tuple[float, float, float, int]]) -> tuple[int, float]:
        s = d = mm = 0.0
        bad = 0
        for ts, td, tm, tb in vals:
            s += ts
            d = td if td > d else d
            mm = tm if tm > mm else mm
            bad += tb
        return (bad, s + d + mm)

    def load_ok(self, q: int, tour: Sequence[int]) -> bool:
        if self.free:
            return True
        load = sum(self.model.demand[i - 1] for i in tour)
        return load <= self.model.capacity[q] + 1e-9


def _edge_costs(model: CompleteModel) -> np.ndarray:
    c = model.coef()
    cost = (c[0] * model.emis + c[2] * model.time).mean(axis=0) + c[3] * model.dist
    if not np.any(cost):
        cost = model.time.mean(axis=0)
    return cost


def _savings_routes(model: CompleteModel) -> list[list[int]]:
    n, m = model.n, model.m
    cost = _edge_costs(model)
    cap = float(model.capacity.min())
    blocked = model.forbidden.all(axis=0)
    routes: dict[int, list[int]] = {i: [i] for i in range(1, n + 1)}
    where = {i: i for i in range(1, n + 1)}
    load = {i: float(model.demand[i - 1]) for i in range(1, n + 1)}
    savings = []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j and not blocked[i, j]:
                savings.append((-(cost[i, 0] + cost[0, j] - cost[i, j]), i, j))
    savings.sort()
    for _, i, j in savings:
        if len(routes) <= m:
            break
        ri, rj = where[i], where[j]
        if ri == rj or routes[ri][-1] != i or routes[rj][0] != j:
            continue
        if load[ri] + load[rj] > cap + 1e-9:
            continue
        routes[ri] = routes[ri] + routes[rj]
        load[ri] += load.pop(rj)
        for c in routes.pop(rj):
            where[c] = ri
    while len(routes) > m:
        # fall back to the cheapest concatenation that fits
        best = None
        keys = sorted(routes)
        for a in keys:
            for b in keys:
                if a == b or load[a] + load[b] > float(model.capacity.max()) + 1e-9:
                    continue
                delta = cost[routes[a][-1], routes[b][0]] - cost[routes[a][-1], 0] - cost[0, routes[b][0]]
                if best is None or delta < best[0]:
                    best = (delta, a, b)
        if best is None:
            raise InfeasibleError("cannot merge routes down to the fleet size within capacity")
        _, a, b = best
        routes[a] = routes[a] + routes.pop(b)
        load[a] += load.pop(b)
    return [routes[k] for k in sorted(routes)]


def _assign_to_vehicles(model: CompleteModel, routes: list[list[int]]) -> list[tuple[int, ...]]:
    demand = [sum(model.demand[i - 1] for i in r) for r in routes]
    r_order = sorted(range(len(routes)), key=lambda i: (-demand[i], i))
    v_order = sorted(range(model.m), key=lambda q: (-model.capacity[q], q))
    tours: list[tuple[int, ...]] = [()] * model.m
    for ri, q in zip(r_order, v_order):
        tours[q] = tuple(routes[ri])
    return tours


def _better(new: tuple[int, float], cur: tuple[int, float]) -> bool:
    if new[0] != cur[0]:
        return new[0] < cur[0]
    return new[1] < cur[1] - 1e-12 * max(1.0, abs(cur[1]))


def _local_search(ev: _Evaluator, tours: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    tours = list(tours)
    vals = [ev.tour(q, t) for q, t in enumerate(tours)]
    cur = ev.combine(vals)
    improved = True
    while improved:
        improved = False
        # each move rewrites at most two tours, so only those are re-evaluated
        for change in _neighbours(ev, tours):
            trial = list(vals)
            for q, t in change:
                trial[q] = ev.tour(q, t)
            val = ev.combine(trial)
            if _better(val, cur):
                for q, t in change:
                    tours[q] = t
                vals, cur = trial, val
                improved = True
                break
    return tours


def _neighbours(ev: _Evaluator, tours: list[tuple[int, ...]]):
    m = len(tours)
    # intra-tour 2-opt
    for q in range(m):
        t = tours[q]
        for i in range(len(t) - 1):
            for j in range(i + 1, len(t)):
                yield ((q, t[:i] + t[i : j + 1][::-1] + t[j + 1 :]),)
    # intra-tour or-opt: move a segment of up to three customers
    for q in range(m):
        t = tours[q]
        for seg in (1, 2, 3):
            for i in range(len(t) - seg + 1):
                piece = t[i : i + seg]
                rest = t[:i] + t[i + seg :]
                for p in range(len(rest) + 1):
                    if p == i:
                        continue
                    yield ((q, rest[:p] + piece + rest[p:]),)
    # inter-tour relocate
    for q1 in range(m):
        if len(tours[q1]) < 2:
            continue
        for i, c in enumerate(tours[q1]):
            src = tours[q1][:i] + tours[q1][i + 1 :]
            for q2 in range(m):
                if q2 == q1:
                    continue
                for p in range(len(tours[q2]) + 1):
                    dst = tours[q2][:p] + (c,) + tours[q2][p:]
                    if ev.load_ok(q2, dst):
                        yield ((q1, src), (q2, dst))
    # inter-tour swap of single customers
    for q1 in range(m):
        for q2 in range(q1 + 1, m):
            for i, a in enumerate(tours[q1]):
                for j, b in enumerate(tours[q2]):
                    t1 = tours[q1][:i] + (b,) + tours[q1][i + 1 :]
                    t2 = tours[q2][:j] + (a,) + tours[q2][j + 1 :]
                    if ev.load_ok(q1, t1) and ev.load_ok(q2, t2):
                        yield ((q1, t1), (q2, t2))
    # hand a whole tour to another vehicle
    for q1 in range(m):
        for q2 in range(q1 + 1, m):
            if ev.load_ok(q1, tours[q2]) and ev.load_ok(q2, tours[q1]):
                yield ((q1, tours[q2]), (q2, tours[q1]))


def _deadline_routes(model: CompleteModel) -> list[list[int]]:
    """Customers by due time, cut into ``m`` consecutive chunks."""
    order = sorted(range(1, model.n + 1), key=lambda i: (model.window[i - 1], i))
    return [list(map(int, chunk)) for chunk in np.array_split(order, model.m)]


def _kick(ev: _Evaluator, tours: list[tuple[int, ...]], rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Random perturbation: move a few customers, or reverse a stretch of one tour."""
    tours = [list(t) for t in tours]
    m = len(tours)
    if rng.random() < 0.3:
        q = int(rng.integers(m))
        if len(tours[q]) > 2:
            i, j = sorted(rng.choice(len(tours[q]), 2, replace=False))
            tours[q][i : j + 1] = tours[q][i : j + 1][::-1]
        return [tuple(t) for t in tours]
    for _ in range(int(rng.integers(2, 4))):
        q1 = int(rng.integers(m))
        if len(tours[q1]) < 2 and m > 1:
            continue
        c = tours[q1].pop(int(rng.integers(len(tours[q1]))))
        q2 = int(rng.integers(m))
        tours[q2].insert(int(rng.integers(len(tours[q2]) + 1)), c)
        if not tours[q1] or not ev.load_ok(q2, tours[q2]):
            tours[q2].remove(c)
            tours[q1].append(c)
    return [tuple(t) for t in tours]


def solve_heuristic(model: CompleteModel, kicks: int = HEURISTIC_KICKS, seed: int = 0) -> CompleteSolution:
    """Savings and due-time starts, each improved by iterated first-improvement local search."""
    _precheck(model)
    ev = _Evaluator(model)
    rng = np.random.default_rng(seed)
    best, best_val = None, None
    for routes in (_savings_routes(model), _deadline_routes(model)):
        tours = _assign_to_vehicles(model, routes)
        if not all(ev.load_ok(q, t) for q, t in enumerate(tours)):
            continue
        tours = _local_search(ev, tours)
        cur = ev.total(tours)
        idle = 0
        for _ in range(kicks):
            cand = _local_search(ev, _kick(ev, tours, rng))
            val = ev.total(cand)
            if _better(val, cur):
                tours, cur, idle = cand, val, 0
            else:
                idle += 1
                if idle >= HEURISTIC_PATIENCE:
                    break
        if best is None or _better(cur, best_val):
            best, best_val = tours, cur
    if best is None:
        raise InfeasibleError("no start fits the fleet capacities")
    if best_val[0]:
        raise InfeasibleError("local search could not avoid forbidden edges")
    return CompleteSolution(model.depot, tuple(tuple(model.nodes[i] for i in t) for t in best))


def solve(model: CompleteModel, threshold: int = EXACT_THRESHOLD) -> CompleteSolution:
    if model.n <= threshold:
        return solve_exact(model, threshold)
    return solve_heuristic(model)
