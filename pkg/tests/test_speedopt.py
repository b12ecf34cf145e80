import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from oracles import random_speed_problem
from roadvrp.assignroute import CompleteSolution
from roadvrp.congestion import effective_bounds
from roadvrp.expand import recover
from roadvrp.metrics import DEFAULT_CURVE, UNIT_NORMALIZATION, WeightVector, fleet_of
from roadvrp.speedopt import brute_force_speeds, build_speed_problem, solve_speeds


def _fig3_problem(fig3, alpha, bounds=None):
    assignment, routes = recover(CompleteSolution(0, ((8, 3, 1),)), fig3.projection)
    bounds = bounds or effective_bounds(fig3.network.edges, {}, fig3.congestion)
    return build_speed_problem(routes, assignment, fig3.network, fleet_of(fig3.fleet, 1), bounds, alpha, UNIT_NORMALIZATION)


def test_time_only_drives_at_limit(fig3):
    sol = solve_speeds(_fig3_problem(fig3, WeightVector((0, 0, 1, 0, 0, 0))))
    assert all(v == pytest.approx(40.23) for v in sol.speeds.values())


def test_emissions_only_drives_at_limit(fig3):
    sol = solve_speeds(_fig3_problem(fig3, WeightVector((1, 0, 0, 0, 0, 0))))
    assert all(v == pytest.approx(40.23) for v in sol.speeds.values())


def test_emissions_optimum_interior_with_wide_bounds(fig3):
    bounds = {e.key: (8.05, 120.0) for e in fig3.network.edges}
    sol = solve_speeds(_fig3_problem(fig3, WeightVector((1, 0, 0, 0, 0, 0)), bounds))
    v_star = minimize_scalar(DEFAULT_CURVE, bounds=(8.05, 120.0), method="bounded", options={"xatol": 1e-9}).x
    assert all(v == pytest.approx(v_star, abs=1e-2) for v in sol.speeds.values())


def test_zero_speed_weights_rejected(fig3):
    with pytest.raises(ValueError):
        _fig3_problem(fig3, WeightVector((0, 1, 0, 1, 0, 0)))


def test_problem_layout(fig3):
    prob = _fig3_problem(fig3, WeightVector((1,) * 6))
    # 13 distinct road edges, (3,5) traversed twice
    assert prob.size == 13
    k = prob.keys.index((0, (3, 5)))
    assert prob.count[k] == 2
    # customer 3 is first reached after 0-6-7-8-6-0-5-3
    row = prob.rows[prob.cust_nodes.index(3)]
    assert row.sum() == 7
    assert row[k] == 0


def test_bad_bounds_and_coefficients():
    prob = random_speed_problem(0)
    with pytest.raises(ValueError):
        type(prob)(**{**prob.__dict__, "lo": prob.hi + 1})
    bad = type(prob)(**{**prob.__dict__, "coeffs": np.full_like(prob.coeffs, np.nan)})
    with pytest.raises(FloatingPointError):
        solve_speeds(bad)


def test_single_edge_closed_form():
    for seed in range(20):
        base = random_speed_problem(seed, max_edges=1)
        w = base.weights * np.array([1.0, 1.0, 0.0, 0.0])
        if not w.any():
            w[0] = 1e-3
        prob = type(base)(**{**base.__dict__, "weights": w})
        d = prob.length[0] * prob.count[0]
        smooth = lambda v: w[0] * d * DEFAULT_CURVE(v) + w[1] * d / v  # noqa: E731
        ref = minimize_scalar(smooth, bounds=(prob.lo[0], prob.hi[0]), method="bounded", options={"xatol": 1e-10}).x
        grid = brute_force_speeds(prob)
        assert abs(grid.speeds[prob.keys[0]] - ref) <= 0.01 + 1e-9


def test_coarse_resolution_returns_endpoint():
    prob = random_speed_problem(11, max_edges=1)
    width = float(prob.hi[0] - prob.lo[0])
    v = brute_force_speeds(prob, resolution=2 * width).speeds[prob.keys[0]]
    assert v in (pytest.approx(prob.lo[0]), pytest.approx(prob.hi[0]))


def test_solver_never_worse_than_start():
    for seed in range(30):
        prob = random_speed_problem(seed)
        start = prob.value(0.5 * (prob.lo + prob.hi))
        sol = solve_speeds(prob)
        assert sol.objective <= start + 1e-12
        v = np.array([sol.speeds[k] for k in prob.keys])
        assert np.all(v >= prob.lo) and np.all(v <= prob.hi)


def test_per_vehicle_split_matches_joint(grid42):
    from roadvrp.assignroute import build_complete_model, solve

    net, proj = grid42.network, grid42.projection
    bounds = {e.key: (8.05, 80.0) for e in net.edges}
    vehicles = fleet_of(grid42.fleet, 3)
    model = build_complete_model(proj, net, vehicles, WeightVector((1,) * 6), UNIT_NORMALIZATION, {k: 40.0 for k in bounds})
    assignment, routes = recover(solve(model), proj)
    alpha = WeightVector((1, 0, 1, 0, 1, 0))
    prob = build_speed_problem(routes, assignment, net, vehicles, bounds, alpha, UNIT_NORMALIZATION)
    split = solve_speeds(prob)
    assert len(split.blocks) == 3
    joint = solve_speeds(build_speed_problem(routes, assignment, net, vehicles, bounds, WeightVector((1, 0, 1, 0, 1, 1e-12)), UNIT_NORMALIZATION))
    assert len(joint.blocks) == 1
    assert split.objective == pytest.approx(joint.objective, rel=1e-6)
