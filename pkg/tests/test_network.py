import itertools
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhythmic.grid import build_grid
from rhythmic.network import (BusLine, Link, Node, OdDemand, Scenario, ScenarioError,
                              ScenarioParseError, compact_intersections, conflict_pairs,
                              dumps_scenario, expand_intersections, k_shortest_paths,
                              load_scenario, save_scenario, scenario_from_dict, scenario_to_dict,
                              validate_scenario, with_candidate_paths)


def crossing(lanes=1) -> Scenario:
    """Two one-way roads crossing at node 5: 1->5->2 and 3->5->4."""
    nodes = tuple(Node(i, "intersection") for i in range(1, 6))
    links = (Link(1, 1, 5, lanes, 20, 30), Link(2, 5, 2, lanes, 20, 30),
             Link(3, 3, 5, lanes, 30, 40), Link(4, 5, 4, lanes, 30, 40))
    return Scenario(nodes, links, demands=(OdDemand(1, 2, 0.5, ((1, 2),)),
                                           OdDemand(3, 4, 0.5, ((3, 4),))))


def test_toy_counts(toy):
    assert (len(toy.nodes), len(toy.links), len(toy.bus_lines)) == (11, 10, 2)


def test_toy_station_dwell_counts(toy):
    # five dwells on line 1 and three on line 2 give 20 * (220 + 120 + 8 * 40) = 13200
    assert [len(b.stations) for b in toy.bus_lines] == [5, 3]


def test_rejects_h_not_multiple_of_t(toy, tmp_path):
    data = scenario_to_dict(toy)
    data["params"]["H"] = 125
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ScenarioError, match="multiple"):
        load_scenario(path)


def test_malformed_file_is_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioParseError):
        load_scenario(path)


def test_empty_bus_lines_valid(toy):
    s = Scenario(toy.nodes, toy.links, (), toy.demands)
    validate_scenario(s)


def test_station_platform_iff_station():
    with pytest.raises(ScenarioError):
        Node(1, "station")
    with pytest.raises(ScenarioError):
        Node(1, "intersection", "side")


def test_link_time_order():
    with pytest.raises(ScenarioError):
        Link(1, 1, 2, 1, 20, 10)
    with pytest.raises(ScenarioError):
        Link(1, 1, 2, 1, 5, 5, virtual=True)


def test_bus_route_must_be_connected(toy):
    bad = BusLine(9, (2, 4), ())
    with pytest.raises(ScenarioError, match="connected"):
        validate_scenario(Scenario(toy.nodes, toy.links, (bad,), toy.demands))


def test_round_trip_file(toy, tmp_path):
    path = tmp_path / "toy.json"
    save_scenario(toy, path)
    again = load_scenario(path)
    assert again == toy
    assert dumps_scenario(again) == path.read_text()


def test_grid_round_trip(grid, tmp_path):
    path = tmp_path / "grid.json"
    save_scenario(grid, path)
    assert load_scenario(path) == grid


def test_toy_single_path(toy):
    d = toy.demands[0]
    paths = k_shortest_paths(toy, d.origin, d.destination, 3)
    assert len(paths) == 1
    assert math.isclose(toy.path_time(paths[0]), 130.0)


def test_k_zero_is_empty(toy):
    assert k_shortest_paths(toy, 1, 11, 0) == []


def test_disconnected_raises(toy):
    with pytest.raises(ScenarioError, match="disconnected"):
        k_shortest_paths(toy, 11, 1, 2)


def test_two_by_two_ties_lexicographic():
    nodes = tuple(Node(i, "intersection") for i in range(1, 5))
    links = (Link(1, 1, 2, 1, 10, 10), Link(2, 2, 4, 1, 10, 10),
             Link(3, 1, 3, 1, 10, 10), Link(4, 3, 4, 1, 10, 10))
    s = Scenario(nodes, links)
    assert k_shortest_paths(s, 1, 4, 3) == [(1, 2), (3, 4)]


def _all_paths(s, o, d):
    out = []

    def walk(v, seen, seq):
        if v == d:
            out.append(tuple(seq))
            return
        for a in s.out_links(v):
            if a.head not in seen:
                walk(a.head, seen | {a.head}, seq + [a.id])
    walk(o, {o}, [])
    return sorted(out, key=lambda p: (s.path_time(p), p))


@st.composite
def small_graphs(draw):
    n = draw(st.integers(3, 7))
    arcs = draw(st.lists(st.tuples(st.integers(1, n), st.integers(1, n)), min_size=2,
                         max_size=14, unique=True))
    arcs = [(i, j) for i, j in arcs if i != j]
    arcs.append((1, n))  # keep the O-D connected
    arcs = sorted(set(arcs))
    times = draw(st.lists(st.sampled_from([5, 10, 15, 20]), min_size=len(arcs),
                          max_size=len(arcs)))
    nodes = tuple(Node(i, "intersection") for i in range(1, n + 1))
    links = tuple(Link(k + 1, i, j, 1, t, t) for k, ((i, j), t) in enumerate(zip(arcs, times)))
    return Scenario(nodes, links), n, draw(st.integers(1, 6))


@settings(max_examples=60, deadline=None)
@given(small_graphs())
def test_k_shortest_matches_enumeration(case):
    s, n, k = case
    got = k_shortest_paths(s, 1, n, k)
    want = _all_paths(s, 1, n)[:k]
    assert got == want
    for p in got:
        assert math.isclose(s.path_time(p), sum(s.link(a).car_min_time for a in p))


def test_expand_single_crossing():
    s = crossing()
    e, info = expand_intersections(s)
    assert len(e.nodes) == len(s.nodes) - 1 + 4
    assert len(e.links) == len(s.links) + 4
    assert set(info["movement"]) == {(1, 2), (1, 4), (3, 2), (3, 4)}


def test_expand_no_intersections_identity(toy):
    e, _ = expand_intersections(toy)
    assert e is toy


def test_expand_grid_counts():
    g = build_grid()
    assert len(compact_intersections(g)) == 18
    e, _ = expand_intersections(g)
    assert (len(e.nodes), len(e.links)) == (101, 129)


def test_expansion_preserves_path_times():
    g = with_candidate_paths(build_grid())
    e, info = expand_intersections(g)
    for d_c, d_e in zip(g.demands, e.demands):
        for p_c, p_e in zip(d_c.paths, d_e.paths):
            assert math.isclose(g.path_time(p_c), e.path_time(p_e))
            assert info["expand_path"](p_c) == p_e


def test_expanded_compact_paths_distinct():
    g = with_candidate_paths(build_grid(), k=3)
    e, info = expand_intersections(g)
    for d in g.demands:
        mapped = [info["expand_path"](p) for p in d.paths]
        assert len(set(mapped)) == len(mapped)


def test_too_many_approaches():
    nodes = tuple(Node(i, "intersection") for i in range(1, 7))
    links = tuple(Link(k, i, 6, 1, 10, 10) for k, i in enumerate(range(1, 6), start=1))
    with pytest.raises(ScenarioError, match="at most 4"):
        compact_intersections(Scenario(nodes, links))


def test_conflict_pairs_crossing():
    e, info = expand_intersections(crossing())
    pairs = conflict_pairs(e)
    assert pairs
    for i, j in pairs:
        assert e.node(i).kind == "intersection" and e.node(j).kind == "intersection"


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.sampled_from([60.0, 120.0, 240.0]),
       st.lists(st.floats(0.0, 5.0), min_size=1, max_size=1))
def test_round_trip_property(omega, H, rates):
    s = crossing().with_params(omega=omega, H=H)
    s = s.with_demand_rates(rates + [0.1])
    assert scenario_from_dict(json.loads(dumps_scenario(s))) == s


def test_demand_rate_nonnegative(toy):
    with pytest.raises(ScenarioError):
        validate_scenario(toy.with_demand_rates([-1.0]))


def test_bus_larger_than_platoon(toy):
    big = tuple(l.__class__(**{**l.__dict__, "size": 5}) for l in toy.bus_lines)
    with pytest.raises(ScenarioError, match="larger"):
        validate_scenario(Scenario(toy.nodes, toy.links, big, toy.demands))


def test_ids_unique(toy):
    nodes = toy.nodes + (toy.nodes[0],)
    with pytest.raises(ScenarioError, match="unique"):
        validate_scenario(Scenario(nodes, toy.links))


def test_toy_path_pairs_distinct(toy):
    links = [a.id for a in toy.links]
    assert len(set(links)) == len(links)
    assert all(len(set(p)) == len(p) for p in itertools.chain(*(d.paths for d in toy.demands)))
