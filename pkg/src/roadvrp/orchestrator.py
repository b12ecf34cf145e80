"""Alternating assignment-routing / speed optimization, weight sweeps and replications."""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Mapping, Sequence

import numpy as np

from . import assignroute
from .assignroute import CompleteSolution, InfeasibleError, build_complete_model, complete_terms
from .congestion import BackgroundTraffic, CongestionParams, effective_bounds, realize_background
from .expand import NCSolution, RepairLimitError, recover, repair_loop, validate_nc_solution
from .instance import Instance
from .metrics import (
    CSV_COLUMNS,
    SPEED_TERMS,
    TERMS,
    UNIT_NORMALIZATION,
    NormalizationWeights,
    ObjectiveVector,
    WeightVector,
    fleet_of,
    objective_terms,
    pareto_filter,
    scalarize,
)
from .network import EdgeKey
from .speedopt import SpeedSolution, build_speed_problem, solve_speeds

SPEED_RTOL = 1e-6


class OverallInfeasibleError(RuntimeError):
    """No fleet size produced a feasible solution."""

    def __init__(self, message: str, statuses: Mapping[int, str]):
        super().__init__(message)
        self.statuses = dict(statuses)


@dataclass(frozen=True)
class SolveConfig:
    alpha: WeightVector = WeightVector((1.0, 0, 0, 0, 0, 0))
    k_max_outer: int = 10
    j_max_inner: int = 5
    veh_start: int = 1
    congestion: CongestionParams | None = None  # None: take the instance's
    background: BackgroundTraffic | None = None
    seed: int | None = None  # overrides the background seed when set
    exact_threshold: int = assignroute.EXACT_THRESHOLD
    workers: int = 1

    def __post_init__(self):
        if self.k_max_outer < 1 or self.j_max_inner < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.veh_start < 1:
            raise ValueError("veh_start must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def params_for(self, inst: Instance) -> CongestionParams:
        return self.congestion or inst.congestion

    def background_for(self, inst: Instance) -> BackgroundTraffic:
        bg = self.background or inst.background
        return bg if self.seed is None else bg.with_seed(self.seed)


@dataclass(frozen=True)
class Normalization:
    w: NormalizationWeights  # road-network terms
    wbar: NormalizationWeights  # complete-graph terms


@dataclass(frozen=True)
class InitialSolution:
    tour: tuple[int, ...]
    solution: NCSolution
    terms: ObjectiveVector
    complete: ObjectiveVector
    norm: Normalization


@dataclass(frozen=True)
class Iterate:
    k: int
    j: int
    veh_count: int
    status: str
    value: float | None = None  # scalar U of this iterate
    best_value: float | None = None  # running best within the fleet size
    repair_rounds: int = 0
    seconds: float = field(default=0.0, compare=False)
    solution: NCSolution | None = None
    terms: ObjectiveVector | None = None
    speed_report: dict | None = field(default=None, compare=False)


@dataclass(frozen=True)
class RunRecord:
    alpha: WeightVector
    norm: Normalization
    iterates: tuple[Iterate, ...]
    statuses: Mapping[int, str]  # fleet size -> "ok" or failure reason
    best_value: float
    best_solution: NCSolution
    best_terms: ObjectiveVector
    best_veh_count: int
    best_speed: SpeedSolution = field(compare=False)
    seconds: float = field(default=0.0, compare=False)

    @property
    def used_vehicles(self) -> int:
        return self.best_solution.used_vehicles


def _context(inst: Instance, cfg: SolveConfig):
    net = inst.network
    counts = realize_background(net, cfg.background_for(inst))
    bounds = effective_bounds(net.edges, counts, cfg.params_for(inst))
    return counts, bounds


def nearest_neighbour_tour(inst: Instance) -> tuple[int, ...]:
    proj = inst.projection
    cur, left, tour = proj.depot, set(inst.network.customer_nodes), []
    while left:
        cur = min(left, key=lambda n: (proj.d_sp[(cur, n)], n))
        tour.append(cur)
        left.remove(cur)
    return tuple(tour)


def initial_solution(inst: Instance, cfg: SolveConfig) -> InitialSolution:
    """Greedy single-vehicle tour driven at the effective speed limits."""
    net, proj = inst.network, inst.projection
    _, bounds = _context(inst, cfg)
    vmax = {e: hi for e, (_, hi) in bounds.items()}
    tour = nearest_neighbour_tour(inst)
    csol = CompleteSolution(proj.depot, (tour,))
    assignment, routes = recover(csol, proj)
    speeds = {(seq.vehicle, e): vmax[e] for seq in routes for e in seq.counts}
    nc = NCSolution(assignment, routes, speeds)
    vehicles = fleet_of(inst.fleet, 1)
    ov = objective_terms(nc, net, vehicles)
    model = build_complete_model(proj, net, vehicles, cfg.alpha, UNIT_NORMALIZATION, vmax)
    cov = complete_terms(csol, model)
    norm = Normalization(NormalizationWeights.from_terms(ov), NormalizationWeights.from_terms(cov))
    return InitialSolution(tour, nc, ov, cov, norm)


def _same_iterate(a: NCSolution, b: NCSolution) -> bool:
    if dict(a.assignment) != dict(b.assignment):
        return False
    if [s.edges for s in a.routes] != [s.edges for s in b.routes]:
        return False
    if a.speeds.keys() != b.speeds.keys():
        return False
    return all(abs(a.speeds[k] - b.speeds[k]) <= SPEED_RTOL * max(abs(b.speeds[k]), 1e-12) for k in a.speeds)


def _speed_step(routes, assignment, inst, vehicles, bounds, alpha, norm) -> SpeedSolution:
    if any(alpha[i] > 0 for i in SPEED_TERMS):
        return solve_speeds(build_speed_problem(routes, assignment, inst.network, vehicles, bounds, alpha, norm.w))
    # speeds do not enter the objective: drive at the effective limit
    speeds = {(seq.vehicle, e): bounds[e][1] for seq in routes for e in seq.counts}
    return SpeedSolution(speeds, 0.0, {}, status="fixed")


class _CachedSolver:
    """Complete-graph solves memoized on the model data.

    Later inner iterations often rebuild an identical model when the speeds
    did not move, so the answer can be reused.
    """

    def __init__(self, threshold: int):
        self.threshold = threshold
        self._memo: dict = {}

    def __call__(self, model) -> CompleteSolution:
        key = (model.time.tobytes(), model.emis.tobytes(), model.forbidden.tobytes(), model.alpha.tobytes())
        if key not in self._memo:
            try:
                self._memo[key] = assignroute.solve(model, self.threshold)
            except InfeasibleError as exc:
                self._memo[key] = exc
        hit = self._memo[key]
        if isinstance(hit, InfeasibleError):
            raise hit
        return hit


def run_algorithm1(inst: Instance, cfg: SolveConfig, norm: Normalization | None = None) -> RunRecord:
    """Outer loop over fleet sizes, inner alternation between routing and speeds."""
    t_start = time.perf_counter()
    net, proj = inst.network, inst.projection
    counts, bounds = _context(inst, cfg)
    vmax = {e: hi for e, (_, hi) in bounds.items()}
    if norm is None:
        norm = initial_solution(inst, cfg).norm
    alpha = cfg.alpha
    solver = _CachedSolver(cfg.exact_threshold)

    iterates: list[Iterate] = []
    statuses: dict[int, str] = {}
    best = None  # (value, (u, solution, terms, speeds), fleet size)
    k, veh = 0, cfg.veh_start
    while k < cfg.k_max_outer and veh <= inst.n_customers:
        vehicles = fleet_of(inst.fleet, veh)
        fleet_best = None
        prev: NCSolution | None = None
        vspeeds: dict = {}
        statuses[veh] = "ok"
        for j in range(1, cfg.j_max_inner + 1):
            t0 = time.perf_counter()

            def build(forbidden, vspeeds=vspeeds):
                return build_complete_model(proj, net, vehicles, alpha, norm.wbar, vmax, vspeeds, forbidden)

            try:
                rep = repair_loop(proj, net, build, counts, solver=solver)
            except (InfeasibleError, RepairLimitError) as exc:
                status = f"{type(exc).__name__}: {exc}"
                iterates.append(Iterate(k, j, veh, status, seconds=time.perf_counter() - t0))
                if fleet_best is None:
                    statuses[veh] = status
                break
            ss = _speed_step(rep.routes, rep.assignment, inst, vehicles, bounds, alpha, norm)
            nc = NCSolution(rep.assignment, rep.routes, ss.speeds)
            ov = objective_terms(nc, net, vehicles)
            u = scalarize(ov, alpha, norm.w)
            if fleet_best is None or u < fleet_best[0]:
                fleet_best = (u, nc, ov, ss)
            iterates.append(
                Iterate(
                    k, j, veh, "ok", u, fleet_best[0], rep.rounds, time.perf_counter() - t0, nc, ov, ss.report()
                )
            )
            if prev is not None and _same_iterate(prev, nc):
                break
            prev = nc
            vspeeds = dict(ss.speeds)
        if fleet_best is not None and (best is None or fleet_best[0] < best[0]):
            best = (fleet_best[0], fleet_best, veh)
        k += 1
        veh += 1

    if best is None:
        raise OverallInfeasibleError("no fleet size admits a feasible solution", statuses)
    u, (_, nc, ov, ss), veh = best
    return RunRecord(
        alpha=alpha,
        norm=norm,
        iterates=tuple(iterates),
        statuses=statuses,
        best_value=u,
        best_solution=nc,
        best_terms=ov,
        best_veh_count=veh,
        best_speed=ss,
        seconds=time.perf_counter() - t_start,
    )


def check_record(inst: Instance, cfg: SolveConfig, rec: RunRecord) -> list[str]:
    """Full road-network validation of the best solution of a run."""
    counts, bounds = _context(inst, cfg)
    vehicles = fleet_of(inst.fleet, rec.best_veh_count)
    return validate_nc_solution(rec.best_solution, inst.network, vehicles, counts, bounds)


# ------------------------------------------------------------------ sweeps


def default_weight_grid() -> list[WeightVector]:
    """Every 0/1 weight vector except zero, each scaled to sum to one."""
    # the unit vectors and two-term pairs are already among the 0/1 vectors
    grid, seen = [], set()
    for bits in itertools.product((1, 0), repeat=6):
        if not any(bits):
            continue
        wv = WeightVector(bits).normalized()
        if wv.values not in seen:
            seen.add(wv.values)
            grid.append(wv)
    return grid


@dataclass(frozen=True)
class FrontPoint:
    alpha: WeightVector
    terms: ObjectiveVector
    veh_count: int
    used_vehicles: int
    record: RunRecord = field(compare=False)


@dataclass(frozen=True)
class SweepResult:
    front: tuple[FrontPoint, ...]
    records: tuple[RunRecord | None, ...]  # one per grid entry, None when infeasible
    grid: tuple[WeightVector, ...]
    norm: Normalization
    failures: Mapping[int, str] = field(default_factory=dict)


def _solve_one(inst: Instance, cfg: SolveConfig, norm: Normalization, alpha: WeightVector):
    try:
        return run_algorithm1(inst, replace(cfg, alpha=alpha), norm), None
    except OverallInfeasibleError as exc:
        return None, str(exc)


def _map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_weights(
    inst: Instance,
    cfg: SolveConfig,
    weight_grid: Sequence[WeightVector] | None = None,
    norm: Normalization | None = None,
) -> SweepResult:
    grid = tuple(default_weight_grid() if weight_grid is None else weight_grid)
    if not grid:
        raise ValueError("weight grid must not be empty")
    if norm is None:
        norm = initial_solution(inst, cfg).norm
    results = _map(partial(_solve_one, inst, cfg, norm), grid, cfg.workers)
    records = tuple(r for r, _ in results)
    failures = {i: msg for i, (_, msg) in enumerate(results) if msg is not None}
    feasible = [r for r in records if r is not None]
    if not feasible:
        raise OverallInfeasibleError("every weight vector was infeasible", {})
    kept = pareto_filter(r.best_terms for r in feasible)
    front = []
    for ov in kept:
        # the first grid entry reaching this point represents it
        rec = next(r for r in feasible if r.best_terms == ov)
        front.append(FrontPoint(rec.alpha, ov, rec.best_veh_count, rec.used_vehicles, rec))
    return SweepResult(tuple(front), records, grid, norm, failures)


# ------------------------------------------------------------ replications


@dataclass(frozen=True)
class ReplicationResult:
    seeds: tuple[int, ...]
    sweeps: tuple[SweepResult, ...]
    grid: tuple[WeightVector, ...]
    # per grid entry: term -> (mean, min, max) over the replications where it was feasible
    aggregate: tuple[dict[str, tuple[float, float, float]] | None, ...]


def replication_seeds(seed: int, reps: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(reps)
    return [int(c.generate_state(1)[0]) for c in children]


def stochastic_replications(
    inst: Instance, cfg: SolveConfig, reps: int, weight_grid: Sequence[WeightVector] | None = None
) -> ReplicationResult:
    """One sweep per independently seeded Poisson background draw."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    bg = cfg.background_for(inst)
    if bg.mode != "poisson":
        raise ValueError("replications need a poisson background")
    grid = tuple(default_weight_grid() if weight_grid is None else weight_grid)
    # one normalization for all replications so their terms stay comparable
    norm = initial_solution(inst, replace(cfg, background=replace(bg, beta=0.0), seed=None)).norm
    seeds = replication_seeds(bg.seed, reps)
    sweeps = []
    for s in seeds:
        rcfg = replace(cfg, background=bg.with_seed(s), seed=None)
        sweeps.append(sweep_weights(inst, rcfg, grid, norm))
    aggregate = []
    for i in range(len(grid)):
        rows = [sw.records[i].best_terms.as_array() for sw in sweeps if sw.records[i] is not None]
        if not rows:
            aggregate.append(None)
            continue
        arr = np.array(rows)
        aggregate.append(
            {t: (float(arr[:, c].mean()), float(arr[:, c].min()), float(arr[:, c].max())) for c, t in enumerate(TERMS)}
        )
    return ReplicationResult(tuple(seeds), tuple(sweeps), grid, tuple(aggregate))


# ------------------------------------------------------------------ export


def _g6(x: float) -> str:
    return f"{x:.6g}"


ALPHA_COLUMNS = tuple(f"alpha_{t.lower()}" for t in TERMS)


def front_csv(sweep: SweepResult) -> str:
    """Front rows with six significant digits; the header carries units."""
    lines = [",".join(ALPHA_COLUMNS + CSV_COLUMNS + ("veh_count", "used_vehicles"))]
    for p in sweep.front:
        cells = [_g6(a) for a in p.alpha.values] + [_g6(x) for x in p.terms.as_array()]
        cells += [str(p.veh_count), str(p.used_vehicles)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def replication_csv(res: ReplicationResult) -> str:
    head = list(ALPHA_COLUMNS) + ["feasible_reps"]
    for col in CSV_COLUMNS:
        head += [f"{col}_mean", f"{col}_min", f"{col}_max"]
    lines = [",".join(head)]
    for i, alpha in enumerate(res.grid):
        agg = res.aggregate[i]
        n_ok = sum(1 for sw in res.sweeps if sw.records[i] is not None)
        cells = [_g6(a) for a in alpha.values] + [str(n_ok)]
        for t in TERMS:
            cells += [_g6(x) for x in agg[t]] if agg else ["", "", ""]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _edge_str(e: EdgeKey) -> list[int]:
    return [e[0], e[1]]


def solution_to_dict(sol: NCSolution, inst: Instance) -> dict:
    arrivals = sol.arrivals(inst.network)
    return {
        "assignment": {str(n): q for n, q in sorted(sol.assignment.items())},
        "routes": [list(seq.node_sequence) for seq in sol.routes],
        "speeds_kmh": [
            {"vehicle": q, "edge": _edge_str(e), "kmh": v} for (q, e), v in sorted(sol.speeds.items())
        ],
        "arrivals_h": [
            {"vehicle": q, "node": node, "visit": i, "hours": t}
            for q, arr in enumerate(arrivals)
            for (node, i), t in sorted(arr.items(), key=lambda kv: kv[1])
        ],
    }


def record_to_dict(rec: RunRecord, inst: Instance) -> dict:
    return {
        "status": "ok",
        "alpha": list(rec.alpha.values),
        "normalization": {"w": list(rec.norm.w.values), "wbar": list(rec.norm.wbar.values)},
        "best": {
            "value": rec.best_value,
            "veh_count": rec.best_veh_count,
            "used_vehicles": rec.used_vehicles,
            "terms": rec.best_terms.as_dict(),
            "speed_solver": rec.best_speed.report(),
            "solution": solution_to_dict(rec.best_solution, inst),
        },
        "fleet_status": {str(v): s for v, s in rec.statuses.items()},
        "iterates": [
            {
                "k": it.k,
                "j": it.j,
                "veh_count": it.veh_count,
                "status": it.status,
                "value": it.value,
                "best_value": it.best_value,
                "repair_rounds": it.repair_rounds,
                "seconds": it.seconds,
                "terms": it.terms.as_dict() if it.terms else None,
                "speed_solver": it.speed_report,
            }
            for it in rec.iterates
        ],
        "seconds": rec.seconds,
    }


def sweep_to_dict(sweep: SweepResult, inst: Instance) -> dict:
    return {
        "status": "ok",
        "normalization": {"w": list(sweep.norm.w.values), "wbar": list(sweep.norm.wbar.values)},
        "front": [
            {
                "alpha": list(p.alpha.values),
                "terms": p.terms.as_dict(),
                "veh_count": p.veh_count,
                "used_vehicles": p.used_vehicles,
                "seconds": p.record.seconds,
                "solution": solution_to_dict(p.record.best_solution, inst),
            }
            for p in sweep.front
        ],
        "failures": {str(i): msg for i, msg in sweep.failures.items()},
        "grid_size": len(sweep.grid),
    }


def replication_to_dict(res: ReplicationResult) -> dict:
    return {
        "status": "ok",
        "seeds": list(res.seeds),
        "fronts": [[{"alpha": list(p.alpha.values), "terms": p.terms.as_dict()} for p in sw.front] for sw in res.sweeps],
        "aggregate": [
            {"alpha": list(a.values), "terms": agg} for a, agg in zip(res.grid, res.aggregate)
        ],
    }
