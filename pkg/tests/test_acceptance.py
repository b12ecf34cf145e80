"""Acceptance checks, one test per criterion, each at its stated tolerance."""

import time

import numpy as np
import pytest
from scipy.stats import binomtest

from conftest import EXPANDED_0_8_3_1_0, EXAMPLE_SP
from oracles import naive_optimum, pareto_oracle, random_model, random_speed_problem
from roadvrp.assignroute import CompleteSolution, evaluate_complete, solve_exact, solve_heuristic
from roadvrp.cli import main
from roadvrp.congestion import BackgroundTraffic, effective_bounds, realize_background
from roadvrp.expand import recover
from roadvrp.instance import parse_instance
from roadvrp.metrics import ObjectiveVector, WeightVector, dominates, fleet_of, pareto_filter
from roadvrp.orchestrator import SolveConfig, check_record, default_weight_grid, run_algorithm1, sweep_weights
from roadvrp.speedopt import brute_force_speeds, build_speed_problem, solve_speeds


def test_c1_shortest_path_fixture(capsys, criterion):
    t0 = time.perf_counter()
    assert main(["sp-table", "--instance", "fig3.json"]) == 0
    elapsed = time.perf_counter() - t0
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    got = {}
    for line in lines:
        a, b, length, path = line.split(",", 3)
        edges = [tuple(int(x) for x in tok.strip("()").split(",")) for tok in path.split()]
        got[(int(a), int(b))] = (edges, float(length))
    assert got == {pair: (path, float(d)) for pair, (path, d) in EXAMPLE_SP.items()}
    order = [(0, 8), (8, 0), (0, 3), (3, 0), (0, 1), (1, 0), (8, 3), (3, 8), (3, 1), (1, 3), (1, 8), (8, 1)]
    assert [got[p][1] for p in order] == [3, 2, 2, 2, 3, 7, 4, 5, 3, 5, 10, 5]
    criterion(f"{len(got)} pairs, {elapsed:.3f}s")
    assert elapsed < 1.0


def test_c2_expansion_fixture(fig3, criterion):
    t0 = time.perf_counter()
    _, (seq,) = recover(CompleteSolution(0, ((8, 3, 1),)), fig3.projection)
    elapsed = time.perf_counter() - t0
    assert seq.node_sequence == EXPANDED_0_8_3_1_0
    assert seq.counts[(3, 5)] == 2
    assert seq.first_traversal[(3, 5)] == 1 and seq.extra[(3, 5)] == 1
    criterion("-".join(map(str, seq.node_sequence)))
    assert elapsed < 1.0


def test_c3_exact_vs_heuristic(criterion):
    t0 = time.perf_counter()
    gaps, naive_ok = [], 0
    for k in range(50):
        model = random_model(2000 + k)
        assert model.n <= 7
        exact = evaluate_complete(solve_exact(model), model)
        heur = evaluate_complete(solve_heuristic(model), model)
        gaps.append((heur - exact) / max(abs(exact), 1e-9))
        if k < 10:
            naive_ok += abs(naive_optimum(model) - exact) <= 1e-9 * max(abs(exact), 1e-9)
    elapsed = time.perf_counter() - t0
    gaps = np.array(gaps)
    matches = int((gaps <= 1e-9).sum())
    criterion(f"match {matches}/50, worst gap {gaps.max():.2%}, naive {naive_ok}/10, {elapsed:.1f}s")
    assert matches >= 40
    assert gaps.max() <= 0.10
    assert naive_ok == 10
    assert elapsed < 120


def test_c4_speed_oracle(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        prob = random_speed_problem(3000 + k)
        assert prob.size <= 3 and len(set(prob.vehicle.tolist())) == 1
        got = solve_speeds(prob).objective
        ref = brute_force_speeds(prob, resolution=0.01).objective
        worst = max(worst, (got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    criterion(f"worst relative excess {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-3
    assert elapsed < 120


def test_c5_gradient_check(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(100):
        base = random_speed_problem(4000 + k)
        # the smooth part needs weight on emissions or time to be non-trivial
        w = base.weights.copy()
        w[:2] = np.where(w[:2] > 0, w[:2], rng.uniform(0.1, 1.0, 2) / [1e4, 1.0])
        prob = type(base)(**{**base.__dict__, "weights": w})
        v = rng.uniform(prob.lo + 0.5, prob.hi - 0.5)
        g = prob.smooth_gradient(v)
        fd = np.empty_like(v)
        for i in range(len(v)):
            h = 1e-4 * v[i]
            up, dn = v.copy(), v.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (prob.smooth_value(up) - prob.smooth_value(dn)) / (2 * h)
        err = float(np.linalg.norm(g - fd) / np.linalg.norm(g))
        assert np.isfinite(err)
        worst = max(worst, err)
    criterion(f"100 points, worst relative error {worst:.2e}")
    assert worst <= 1e-5


@pytest.fixture(scope="module")
def fixed_routes(grid42):
    rec = run_algorithm1(grid42, SolveConfig(alpha=WeightVector((1, 1, 1, 1, 1, 1))))
    sol = rec.best_solution
    return sol.routes, sol.assignment, fleet_of(grid42.fleet, rec.best_veh_count), rec.norm


def _speed_opt(inst, routes, assignment, vehicles, norm, alpha, background):
    net = inst.network
    bounds = effective_bounds(net.edges, realize_background(net, background), inst.congestion)
    return solve_speeds(build_speed_problem(routes, assignment, net, vehicles, bounds, alpha, norm.w))


def test_c6_congestion_monotonicity(grid42, fixed_routes, criterion):
    routes, assignment, vehicles, norm = fixed_routes
    alphas = [a for a in default_weight_grid() if a[0] or a[2] or a[4] or a[5]]
    for alpha in alphas:
        free = _speed_opt(grid42, routes, assignment, vehicles, norm, alpha, BackgroundTraffic("fraction", 0.0))
        half = _speed_opt(grid42, routes, assignment, vehicles, norm, alpha, BackgroundTraffic("fraction", 0.5))
        assert half.objective >= free.objective * (1 - 1e-9)
        assert half.terms["TDT"] >= free.terms["TDT"] * (1 - 1e-9)
        assert half.terms["TGE"] >= free.terms["TGE"] * (1 - 1e-9)

    alpha = WeightVector((1, 1, 1, 1, 1, 1))
    wins = losses = 0
    for seed in range(30):
        lo = _speed_opt(grid42, routes, assignment, vehicles, norm, alpha, BackgroundTraffic("poisson", 0.5, 0.10, seed=seed))
        hi = _speed_opt(grid42, routes, assignment, vehicles, norm, alpha, BackgroundTraffic("poisson", 0.5, 0.15, seed=seed))
        wins += hi.objective > lo.objective
        losses += hi.objective < lo.objective
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue
    criterion(f"{len(alphas)} alphas monotone; beta 0.15 vs 0.10: {wins} up, {losses} down, p={p:.1e}")
    assert p < 0.05


def test_c7_pareto_oracle(criterion):
    rng = np.random.default_rng(7)
    for k in range(20):
        raw = rng.integers(0, 6, (200, 6)) if k % 2 else rng.random((200, 6)) ** 3
        pts = [ObjectiveVector.from_array(r) for r in raw]
        got = {tuple(p.as_array()) for p in pareto_filter(pts)}
        assert got == pareto_oracle(raw)
    criterion("20 sets of 200 points")


@pytest.fixture(scope="module")
def sweep42(grid42):
    cfg = SolveConfig()
    t0 = time.perf_counter()
    res = sweep_weights(grid42, cfg)
    return cfg, res, time.perf_counter() - t0


def test_c8_structural_front(grid42, sweep42, criterion):
    cfg, res, elapsed = sweep42
    pts = [p.terms.as_array() for p in res.front]
    assert not any(dominates(a, b) for a in pts for b in pts)
    for p in res.front:
        assert check_record(grid42, cfg, p.record) == []
        assert p.terms.TSC == 100 * p.used_vehicles
    criterion(f"{len(res.front)} front points from {len(res.grid)} weights, {elapsed:.0f}s")
    assert len(res.front) >= 3
    assert elapsed < 300


def test_c9_sweep_csv_deterministic(tmp_path, criterion):
    inst = tmp_path / "seed42.json"
    assert main(["generate", "--seed", "42", "--out", str(inst)]) == 0
    outs = []
    for k in range(2):
        out = tmp_path / f"front{k}.csv"
        assert main(["sweep", "--instance", str(inst), "--out", str(out), "--seed", "42"]) == 0
        outs.append(out.read_bytes())
    assert parse_instance(inst).n_customers == 10
    rows = len(outs[0].splitlines()) - 1
    criterion(f"{len(outs[0])} bytes, {rows} rows")
    assert outs[0] == outs[1]
