import math

import numpy as np
import pytest
from scipy.stats import poisson

from roadvrp.congestion import (
    BackgroundTraffic,
    CongestionParams,
    clamped_poisson,
    capacity_violations,
    effective_bounds,
    estimate_kcap,
    realize_background,
    speed_upper_bound,
)
from roadvrp.network import Edge, RouteSequence, build_route_sequence

E = Edge(0, 1, 1.0, 8.05, 40.23, 10)


def test_speed_bound_values():
    p = CongestionParams()
    assert speed_upper_bound(E, 0, p) == 40.23
    assert speed_upper_bound(E, 5, p) == pytest.approx(32.184, abs=1e-12)
    assert speed_upper_bound(E, 10, p) == pytest.approx(20.115, abs=1e-12)
    # the floor takes over once congestion is heavy enough
    slow = Edge(0, 1, 1.0, 25.0, 40.23, 10)
    assert speed_upper_bound(slow, 10, p) == 25.0
    with pytest.raises(ValueError):
        speed_upper_bound(E, 11, p)


def test_speed_bound_monotone_in_count():
    p = CongestionParams(gamma=0.15, eta=4)
    vals = [speed_upper_bound(E, k, p) for k in range(11)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_effective_bounds():
    full = effective_bounds([E], {E.key: 10}, CongestionParams())
    assert full[E.key] == (8.05, pytest.approx(max(40.23 / 2, 8.05)))
    assert effective_bounds([E], {}, CongestionParams())[E.key] == (8.05, 40.23)


def test_params_validation():
    with pytest.raises(ValueError):
        CongestionParams(gamma=0)
    with pytest.raises(ValueError):
        BackgroundTraffic("fraction", fraction=1.5)
    with pytest.raises(ValueError):
        BackgroundTraffic("tidal")


def test_kcap_estimate():
    assert estimate_kcap(0.009) == 2
    assert estimate_kcap(0.001) == 1
    assert estimate_kcap(1.0) == 222


def test_fraction_background(fig3):
    net = fig3.network
    assert set(realize_background(net, BackgroundTraffic("fraction", 0.0)).values()) == {0}
    assert set(realize_background(net, BackgroundTraffic("fraction", 0.5)).values()) == {5}


def test_clamped_poisson_mean_matches_exact():
    lam, cap, n = 0.4, 4, 100_000
    rng = np.random.default_rng(7)
    draws = clamped_poisson(np.full(n, lam), np.full(n, cap), rng)
    ks = np.arange(cap)
    exact = float((ks * poisson.pmf(ks, lam)).sum() + cap * poisson.sf(cap - 1, lam))
    assert abs(draws.mean() - exact) <= 0.01 * exact
    assert draws.max() <= cap


def test_poisson_background_is_seeded_and_monotone(grid42):
    net = grid42.network
    lo = realize_background(net, BackgroundTraffic("poisson", beta=0.10, seed=3))
    hi = realize_background(net, BackgroundTraffic("poisson", beta=0.15, seed=3))
    assert lo == realize_background(net, BackgroundTraffic("poisson", beta=0.10, seed=3))
    assert all(hi[e] >= lo[e] for e in lo)
    assert all(0 <= k <= net.edge(e).kcap for e, k in hi.items())
    assert set(realize_background(net, BackgroundTraffic("poisson", beta=0.0, seed=3)).values()) == {0}


def test_explicit_background_checked(fig3):
    with pytest.raises(ValueError):
        realize_background(fig3.network, BackgroundTraffic("explicit", counts={(0, 6): 99}))


def _seq(q, nodes):
    return build_route_sequence(q, list(zip(nodes[:-1], nodes[1:])), 0)


def test_capacity_violations():
    caps = {(0, 1): 2, (1, 0): 2}
    routes = [_seq(q, [0, 1, 0]) for q in range(3)]
    assert capacity_violations(routes[:1], {}, {k: 1 for k in caps}) == []
    out = capacity_violations(routes, {}, caps)
    assert [(v.edge, v.load, v.cap, v.vehicles) for v in out] == [((0, 1), 3, 2, (2,)), ((1, 0), 3, 2, (2,))]
    (v,) = capacity_violations(routes[:1], {(0, 1): 2}, caps)
    assert (v.edge, v.load, v.cap) == ((0, 1), 3, 2)
    # repeated traversals by one vehicle occupy the edge once
    twice = _seq(0, [0, 1, 0, 1, 0])
    assert capacity_violations([twice], {}, {k: 1 for k in caps}) == []
    assert capacity_violations([RouteSequence(0, ())], {}, caps) == []
