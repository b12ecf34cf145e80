import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EXPANDED_0_8_3_1_0, EXAMPLE_SP
from oracles import bellman_ford
from roadvrp.instance import GeneratorSpec, generate_instance
from roadvrp.network import (
    Customer,
    Edge,
    RoadNetwork,
    RouteError,
    RouteSequence,
    arrival_schedule,
    build_route_sequence,
    c1,
    c2,
    c3,
    shortest_paths,
    validate_network,
)


def _chain(nodes):
    return list(zip(nodes[:-1], nodes[1:]))


@pytest.fixture
def seq53():
    return build_route_sequence(0, _chain(EXPANDED_0_8_3_1_0), 0)


def test_fig3_is_valid(fig3):
    assert validate_network(fig3.network) == []


def test_zero_length_edge_reported(fig3):
    net = fig3.network
    edges = [replace(e, length=0.0) if e.key == (0, 6) else e for e in net.edges]
    bad = validate_network(RoadNetwork(net.nodes, edges, net.depot, net.customers))
    assert [v.rule for v in bad] == ["nonpositive length"]


def test_customer_8_unreachable_from_depot(fig3):
    net = fig3.network
    edges = [e for e in net.edges if e.key != (0, 6)]
    bad = validate_network(RoadNetwork(net.nodes, edges, net.depot, net.customers))
    assert [(v.rule, v.where) for v in bad] == [("unreachable", 8)]


def test_other_rules():
    nodes = [0, 1]
    e = Edge(0, 1, 1.0, 8.05, 40.23, 5)
    back = Edge(1, 0, 1.0, 8.05, 40.23, 5)
    cases = {
        "speed limits": [replace(e, vmin=50.0), back],
        "kcap": [replace(e, kcap=0), back],
        "self loop": [Edge(0, 0, 1.0, 8.05, 40.23, 5), e, back],
        "duplicate edge": [e, e, back],
        "unknown node": [Edge(0, 7, 1.0, 8.05, 40.23, 5), e, back],
    }
    for rule, edges in cases.items():
        rules = [v.rule for v in validate_network(RoadNetwork(nodes, edges, 0, [Customer(1)]))]
        assert rule in rules, (rule, rules)
    rules = [v.rule for v in validate_network(RoadNetwork(nodes, [e, back], 0, [Customer(0)]))]
    assert "customer" in rules
    rules = [v.rule for v in validate_network(RoadNetwork(nodes, [e, back], 5, [Customer(1)]))]
    assert "depot" in rules


def test_example_paths_and_lengths(fig3):
    proj = shortest_paths(fig3.network)
    assert set(proj.pairs) == set(EXAMPLE_SP)
    for pair, (path, length) in EXAMPLE_SP.items():
        assert list(proj.sp_edges[pair]) == path
        assert proj.d_sp[pair] == length
    assert all(a != b for a, b in proj.pairs)


def test_dijkstra_matches_bellman_ford():
    for seed in range(6):
        inst = generate_instance(GeneratorSpec(rows=6, cols=6, customers=6, seed=seed, drop_prob=0.3))
        net, proj = inst.network, inst.projection
        for a in proj.nodes:
            dist = bellman_ford(net.nodes, net.edges, a)
            for b in proj.nodes:
                if a != b:
                    assert math.isclose(proj.d_sp[(a, b)], dist[b], rel_tol=1e-12)
                    path = proj.sp_edges[(a, b)]
                    assert path[0][0] == a and path[-1][1] == b


def test_ties_take_lexicographically_smallest_path():
    # two equal routes 0->1->3 and 0->2->3
    edges = [Edge(a, b, 1.0, 8.05, 40.23, 5) for a, b in [(0, 1), (0, 2), (1, 3), (2, 3), (3, 0)]]
    proj = shortest_paths(RoadNetwork([0, 1, 2, 3], edges, 0, [Customer(3)]))
    assert proj.sp_edges[(0, 3)] == ((0, 1), (1, 3))


def test_route_sequence_counts(seq53):
    assert seq53.node_sequence == EXPANDED_0_8_3_1_0
    assert seq53.counts[(3, 5)] == 2
    assert seq53.first_traversal[(3, 5)] == 1
    assert seq53.extra[(3, 5)] == 1
    assert sum(seq53.extra.values()) == 1


def test_route_sequence_errors():
    with pytest.raises(RouteError, match="route must start at depot"):
        build_route_sequence(0, [], 0)
    with pytest.raises(RouteError, match="broken chain at position 2"):
        build_route_sequence(0, [(0, 5), (3, 5), (5, 0)], 0)
    with pytest.raises(RouteError, match="route must end at depot"):
        build_route_sequence(0, [(0, 5)], 0)


def test_c1(seq53):
    assert c1(seq53, 1) == (0, 6)
    assert c1(seq53, 4) == (8, 6)
    with pytest.raises(IndexError):
        c1(seq53, 0)


def test_c2(seq53):
    assert c2(seq53, 5, 14) == 3
    assert c2(seq53, 6, 1) == 1
    assert c2(seq53, 9, 14) == 0


def test_c3():
    assert c3(EXAMPLE_SP[(1, 8)][0], (3, 5)) == 1
    assert c3(EXAMPLE_SP[(0, 3)][0], (6, 7)) == 0
    for path, _ in EXAMPLE_SP.values():
        assert sum(c3(path, e) for e in set(path)) == len(path)


def test_arrival_schedule(fig3, seq53):
    lengths = {e.key: e.length for e in fig3.network.edges}
    speeds = {e: 16.09 for e in seq53.counts}
    arr, first = arrival_schedule(seq53, speeds, lengths)
    assert first[8] == pytest.approx(3 / 16.09, abs=1e-12)
    assert round(first[8], 4) == 0.1865
    assert sorted(i for (n, i) in arr if n == 5) == [1, 2, 3]
    assert arr[(0, 0)] == 0.0
    assert arr[(0, 2)] == pytest.approx(sum(lengths[e] for e in seq53.edges) / 16.09)
    assert arrival_schedule(RouteSequence(0, ()), {}, {}) == ({}, {})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(8.05, 40.23))
def test_arrivals_increase_along_route(seed, v):
    inst = generate_instance(GeneratorSpec(rows=4, cols=4, customers=3, seed=seed))
    proj = inst.projection
    tour = list(proj.nodes)
    edges = []
    for a, b in zip(tour, tour[1:] + tour[:1]):
        edges.extend(proj.sp_edges[(a, b)])
    seq = build_route_sequence(0, edges, proj.depot)
    lengths = {e.key: e.length for e in inst.network.edges}
    arr, first = arrival_schedule(seq, {e: v for e in seq.counts}, lengths)
    times = sorted(arr.values())
    assert len(set(times)) == len(times)
    assert all(first[n] == arr[(n, 1)] for n in first)
