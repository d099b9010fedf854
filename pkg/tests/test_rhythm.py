import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import crossing_oracle
from rhythmic.network import Link, Node, Scenario, conflict_pairs, expand_intersections
from rhythmic.rhythm import (FIFO_OK, FIFO_VIOLATION, BackgroundRhythm, RhythmInfeasible,
                             design_background_rhythm, fifo_conflict, fifo_verdict, lane_capacity,
                             link_delays, max_admissible_traffic, realized_travel_time,
                             rhythm_from_dict, rhythm_from_times, rhythm_to_dict)


def one_link(tau_i, tau_j, alpha, T=10.0, Q=12):
    return BackgroundRhythm(T, Q, {1: tau_i, 2: tau_j}, {1: alpha}, link_ends={1: (1, 2)})


def test_background_pace_zero_delay():
    assert realized_travel_time(one_link(0, 0, 2), 1, 1, 3) == (20.0, 0)


def test_wrapped_platoon():
    assert realized_travel_time(one_link(0, 0, 2), 1, 3, 1) == (100.0, 1)


def test_offset_link_needs_wrap():
    rh = one_link(3, 6, 2)
    assert rh.travel_time(1) == 23.0
    assert realized_travel_time(rh, 1, 2, 3) == (133.0, 1)


def test_platoon_number_range():
    with pytest.raises(ValueError):
        realized_travel_time(one_link(0, 0, 1), 1, 0, 3)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 9.99), st.floats(0, 9.99), st.integers(0, 14), st.integers(1, 12),
       st.integers(1, 12))
def test_realized_time_properties(ti, tj, alpha, q, qh):
    rh = one_link(ti, tj, alpha)
    t_a = rh.travel_time(1)
    t, beta = realized_travel_time(rh, 1, q, qh)
    assert t >= t_a - 1e-9
    assert math.isclose((t - t_a) / rh.T, round((t - t_a) / rh.T), abs_tol=1e-9)
    if beta > 0:
        assert t - rh.H < t_a - 1e-9


def test_fifo_documented_cases():
    assert fifo_verdict(1, (1, 5), (2, 3), 12) == FIFO_VIOLATION
    assert fifo_verdict(2, (1, 4), (2, 3), 12) == FIFO_OK
    assert fifo_verdict(2, (1, 4), (2, 5), 12) == FIFO_OK


@pytest.mark.parametrize("alpha", [1, 2, 3])
def test_fifo_matches_crossing_oracle(alpha):
    Q = 12
    bad = 0
    for qm, hm, qn, hn in itertools.product(range(1, Q + 1), repeat=4):
        if qm == qn or hm == hn:
            continue
        bad += fifo_verdict(alpha, (qm, hm), (qn, hn), Q) != crossing_oracle(
            alpha, (qm, hm), (qn, hn), Q)
    assert bad == 0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 13), st.tuples(st.integers(1, 12), st.integers(1, 12)),
       st.tuples(st.integers(1, 12), st.integers(1, 12)))
def test_fifo_symmetric(alpha, m, n):
    assert fifo_verdict(alpha, m, n, 12) == fifo_verdict(alpha, n, m, 12)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 13), st.integers(0, 11), st.tuples(st.integers(1, 12), st.integers(1, 12)),
       st.tuples(st.integers(1, 12), st.integers(1, 12)))
def test_fifo_shift_invariant(alpha, c, m, n):
    def sh(v):
        return tuple((x - 1 + c) % 12 + 1 for x in v)
    assert fifo_verdict(alpha, m, n, 12) == fifo_verdict(alpha, sh(m), sh(n), 12)


def test_fifo_conflict_uses_link_alpha():
    rh = one_link(0, 3, 1)
    assert fifo_conflict(rh, 1, (1, 5), (2, 3)) == fifo_verdict(1, (1, 5), (2, 3), 12)


def test_toy_rhythm_zero_delay(toy):
    rh = design_background_rhythm(toy)
    assert all(abs(r) < 1e-9 for r in link_delays(toy, rh).values())
    for a in toy.links:
        assert math.isclose(rh.travel_time(a.id), a.car_min_time)


def crossing_roads():
    nodes = tuple(Node(i, "intersection") for i in range(1, 6))
    links = (Link(1, 1, 5, 1, 20, 20), Link(2, 5, 2, 1, 20, 20),
             Link(3, 3, 5, 1, 20, 20), Link(4, 5, 4, 1, 20, 20))
    return expand_intersections(Scenario(nodes, links))[0]


def test_crossing_offset_half_cycle():
    s = crossing_roads()
    rh = design_background_rhythm(s)
    pairs = conflict_pairs(s)
    assert pairs
    for i, j in pairs:
        assert math.isclose((rh.tau[i] - rh.tau[j]) % s.T, s.T / 2)


def test_inconsistent_conflicts_raise():
    s = crossing_roads()
    a, b = conflict_pairs(s)[0]
    # a triangle of half-cycle offsets cannot be satisfied
    others = [n.id for n in s.nodes if n.id not in (a, b)]
    with pytest.raises(RhythmInfeasible):
        design_background_rhythm(s, conflicts=[(a, b), (b, others[0]), (others[0], a)])


def test_grid_rhythm_conflicts_and_delays(grid, grid_rhythm):
    T = grid.T
    for i, j in conflict_pairs(grid):
        assert math.isclose((grid_rhythm.tau[i] - grid_rhythm.tau[j]) % T, T / 2, abs_tol=1e-9)
    for r in link_delays(grid, grid_rhythm).values():
        assert -1e-9 <= r < T


def test_rhythm_round_trip(grid, grid_rhythm):
    again = rhythm_from_dict(grid, rhythm_to_dict(grid, grid_rhythm))
    assert again.tau == grid_rhythm.tau and again.alpha == grid_rhythm.alpha


def test_capacity_formulas():
    assert lane_capacity(12, 4, 1, True) == 40
    assert lane_capacity(12, 4, 1, False) == 48
    assert lane_capacity(12, 4, 2, True) == 88
    assert lane_capacity(12, 4, 2, False) == 96


def test_toy_admissible(toy):
    cap = max_admissible_traffic(toy)
    assert cap.per_od[toy.demands[0].key] == 40


def test_grid_admissible(grid):
    cap = max_admissible_traffic(grid)
    assert set(cap.per_od.values()) == {88}


def test_rhythm_from_times_alpha_minimal(toy):
    rh = rhythm_from_times(toy)
    for a in toy.links:
        t = rh.travel_time(a.id)
        assert a.car_min_time <= t < a.car_min_time + toy.T
