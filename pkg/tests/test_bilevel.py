import csv
import itertools

import numpy as np
import pytest

from rhythmic.bilevel import (VnsParams, _bounds, initial_bus_plan, itinerary_of,
                              local_search_step, repair_fifo_violations, run_bilevel)
from rhythmic.design import BusItinerary, RchPlan, validate_bus_itinerary
from rhythmic.network import toy_scenario
from rhythmic.rhythm import FIFO_VIOLATION, fifo_verdict, rhythm_from_times


@pytest.fixture(scope="module")
def short_run(toy, toy_rhythm):
    return run_bilevel(toy, toy_rhythm, VnsParams(max_iter=25, seed=7))


def test_initial_plan_is_feasible(toy, toy_rhythm, grid, grid_rhythm):
    for s, rh in ((toy, toy_rhythm), (grid, grid_rhythm)):
        validate_bus_itinerary(s, rh, itinerary_of(s, rh, initial_bus_plan(s, rh)))


def test_initial_plan_ignores_demand():
    a, b = toy_scenario(0.2, 0.9), toy_scenario(1.0, 0.1)
    assert initial_bus_plan(a, rhythm_from_times(a)) == initial_bus_plan(b, rhythm_from_times(b))


def test_step_moves_everything_at_half(toy):
    x = initial_bus_plan(toy, rhythm_from_times(toy))
    lo, hi = _bounds(toy, x)
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = local_search_step(toy, x, toy.T, 0.5, 0.5, rng)
        moved = np.abs(y.vector() - x.vector())
        free = (x.vector() - toy.T >= lo) & (x.vector() + toy.T <= hi)
        assert np.allclose(moved[free], toy.T)


def test_step_moves_nothing_with_full_window(toy):
    x = initial_bus_plan(toy, rhythm_from_times(toy))
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert local_search_step(toy, x, toy.T, 0.0, 1.0, rng) == x


def test_step_stays_on_grid_and_in_bounds(toy):
    x = initial_bus_plan(toy, rhythm_from_times(toy))
    rng = np.random.default_rng(2)
    for _ in range(200):
        x = local_search_step(toy, x, 3 * toy.T, 0.3, 0.7, rng)
        v = x.vector()
        assert np.allclose(v / toy.T, np.round(v / toy.T))
        assert np.all(v >= 0) and np.all(v < toy.H)


def test_schedule_endpoints():
    p = VnsParams(max_iter=100)
    assert p.schedule(0) == pytest.approx((0.3, 0.7))
    assert p.schedule(100) == pytest.approx((0.05, 0.95))
    lo, hi = p.schedule(50)
    assert lo <= 0.3 and hi >= 0.7


@pytest.mark.parametrize("kw", [dict(p_lower0=0.8, p_upper0=0.2), dict(max_iter=-1),
                                dict(window=0), dict(batch=0)])
def test_bad_params(toy, kw):
    with pytest.raises(ValueError):
        VnsParams(**kw).resolved(toy)


def test_incumbent_never_increases(short_run):
    inc = [r.incumbent for r in short_run.log]
    assert len(inc) == 25
    assert all(b <= a + 1e-9 for a, b in zip(inc, inc[1:]))
    assert short_run.lp_objective == pytest.approx(inc[-1])


def test_lp_bound_below_milp(short_run):
    assert short_run.lp_objective <= short_run.milp_objective + 1e-6
    assert short_run.breakdown.O == pytest.approx(short_run.milp_objective, rel=1e-6)


def test_deterministic(toy, toy_rhythm, short_run):
    again = run_bilevel(toy, toy_rhythm, VnsParams(max_iter=25, seed=7))
    assert again.log == short_run.log and again.upper == short_run.upper


def test_zero_iterations_keeps_start(toy, toy_rhythm):
    res = run_bilevel(toy, toy_rhythm, VnsParams(max_iter=0))
    assert res.log == [] and res.upper == initial_bus_plan(toy, toy_rhythm)


def test_log_csv(short_run, tmp_path):
    path = tmp_path / "it.csv"
    short_run.write_log(path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 25
    assert list(rows[0]) == ["iteration", "candidate", "incumbent", "delta", "accepted", "status"]


def _crossing_pair(rh, a, Q):
    alpha = rh.alpha[a]
    for m, n in itertools.combinations(itertools.product(range(1, Q + 1), repeat=2), 2):
        if m[0] != n[0] and m[1] != n[1] and fifo_verdict(alpha, m, n, Q) == FIFO_VIOLATION:
            return m, n
    raise AssertionError("no crossing pair")


def _plan(pi):
    realized = {}
    for (_, _, a, q, h) in pi:
        realized.setdefault(a, set()).add((q, h))
    return RchPlan(realized, {}, BusItinerary(), {}, dict(pi), {})


def test_repair_uncrosses_same_path(toy, toy_rhythm):
    a = 3
    m, n = _crossing_pair(toy_rhythm, a, toy.Q)
    pi = {(0, 0, a, *m): 2.0, (0, 0, a, *n): 3.0}
    fixed, report = repair_fifo_violations(toy, toy_rhythm, _plan(pi))
    assert report.swaps >= 1 and report.flagged == ()
    entries, exits = {}, {}
    for (_, _, _, q, h), v in fixed.pi.items():
        entries[q] = entries.get(q, 0) + v
        exits[h] = exits.get(h, 0) + v
    assert entries == pytest.approx({m[0]: 2.0, n[0]: 3.0})
    assert exits == pytest.approx({m[1]: 2.0, n[1]: 3.0})
    used = [(q, h) for (*_, q, h), v in fixed.pi.items() if v > 1e-9]
    for x, y in itertools.combinations(used, 2):
        if x[0] != y[0] and x[1] != y[1]:
            assert fifo_verdict(toy_rhythm.alpha[a], x, y, toy.Q) != FIFO_VIOLATION


def test_repair_flags_other_paths(toy, toy_rhythm):
    a = 3
    m, n = _crossing_pair(toy_rhythm, a, toy.Q)
    pi = {(0, 0, a, *m): 2.0, (0, 1, a, *n): 3.0}
    fixed, report = repair_fifo_violations(toy, toy_rhythm, _plan(pi))
    assert report.swaps == 0 and len(report.flagged) == 1
    assert report.flagged[0][-1] == "same destination"
    assert fixed.pi == pi


def test_repair_leaves_clean_plan(short_run, toy, toy_rhythm):
    fixed, report = repair_fifo_violations(toy, toy_rhythm, short_run.plan)
    assert report.swaps == 0 and report.cost_delta == 0
    assert fixed.pi == short_run.plan.pi
