import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_milp, random_lp, random_milp, vertex_lp
from rhythmic.solver import (BINARY, INTEGER, MilpModel, ModelError, dual_objective, dual_sign_ok,
                             solve, solve_lp, solve_milp)


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol * max(1.0, abs(b))


def test_lp_single_bound():
    m = MilpModel()
    x = m.add_var(obj=1.0)
    m.add_constr({x: 1.0}, ">=", 3.0)
    sol = solve_lp(m)
    assert sol.status == "optimal"
    assert close(sol.objective, 3.0) and close(sol.x[x], 3.0)


def test_lp_infeasible():
    m = MilpModel()
    x = m.add_var(obj=1.0)
    m.add_constr({x: 1.0}, "<=", 1.0)
    m.add_constr({x: 1.0}, ">=", 2.0)
    assert solve_lp(m).status == "infeasible"


def test_lp_unbounded():
    m = MilpModel()
    m.add_var(obj=-1.0)
    assert solve_lp(m).status == "unbounded"


def test_lp_iteration_limit():
    rng = np.random.default_rng(3)
    m = random_lp(rng, n=8)
    sol = solve_lp(m, max_iter=1)
    assert sol.status in ("iteration-limit", "optimal", "infeasible")


def test_knapsack_matches_enumeration():
    m = MilpModel()
    value, weight = [6, 5, 8, 9, 6], [2, 3, 6, 7, 5]
    xs = [m.add_var(kind=BINARY, obj=-v) for v in value]
    m.add_constr({x: w for x, w in zip(xs, weight)}, "<=", 15)
    sol = solve_milp(m)
    assert close(sol.objective, brute_force_milp(m))


def test_integral_root_needs_no_branching():
    m = MilpModel()
    x = m.add_var(kind=INTEGER, lb=0, ub=5, obj=1.0)
    m.add_constr({x: 1.0}, ">=", 2.0)
    sol = solve_milp(m)
    assert sol.status == "optimal" and sol.nodes == 0 and close(sol.objective, 2.0)


def test_integer_needs_finite_bounds():
    m = MilpModel()
    with pytest.raises(ModelError):
        m.add_var(kind=INTEGER, lb=0)


def test_constraint_must_reference_declared_variable():
    m = MilpModel()
    with pytest.raises(ModelError):
        m.add_constr({3: 1.0}, "<=", 1.0)


def test_node_limit_returns_incumbent_with_gap():
    rng = np.random.default_rng(11)
    m = MilpModel()
    n = 14
    xs = [m.add_var(kind=BINARY, obj=-float(v)) for v in rng.integers(10, 30, size=n)]
    m.add_constr({x: float(w) for x, w in zip(xs, rng.integers(5, 20, size=n))}, "<=", 60)
    sol = solve_milp(m, node_limit=2)
    assert sol.status in ("iteration-limit", "optimal")
    if sol.status == "iteration-limit" and sol.x.size:
        assert m.is_feasible(sol.x)
        assert sol.gap >= 0


def test_unknown_backend():
    with pytest.raises(ValueError):
        solve(MilpModel(), backend="nope")


def test_lp_export_mentions_every_variable():
    m = MilpModel("demo")
    x = m.add_var("x", obj=1.0)
    y = m.add_var("y", kind=BINARY)
    m.add_constr({x: 1.0, y: 2.0}, "<=", 4.0, "c1")
    text = m.to_lp()
    assert "Minimize" in text and "Binar" in text and "c1" in text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_lp_matches_vertex_enumeration(seed):
    m = random_lp(np.random.default_rng(seed))
    want = vertex_lp(m)
    got = solve_lp(m)
    if want is None:
        assert got.status == "infeasible"
    else:
        assert got.status == "optimal" and close(got.objective, want)
        assert m.max_violation(got.x) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_lp_strong_duality(seed):
    m = random_lp(np.random.default_rng(seed))
    sol = solve_lp(m)
    if sol.status != "optimal":
        return
    assert sol.duals is not None
    assert close(dual_objective(m, sol.duals), sol.objective)
    assert dual_sign_ok(m, sol.duals)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_milp_matches_enumeration(seed):
    m = random_milp(np.random.default_rng(seed))
    want = brute_force_milp(m)
    got = solve_milp(m)
    if want is None:
        assert got.status == "infeasible"
    else:
        assert got.status == "optimal" and close(got.objective, want)
        assert m.is_feasible(got.x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_backends_agree(seed):
    m = random_milp(np.random.default_rng(seed))
    a, b = solve(m, backend="bnb"), solve(m, backend="highs")
    assert a.status == b.status
    if a.status == "optimal":
        assert close(a.objective, b.objective)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_deterministic(seed):
    m = random_milp(np.random.default_rng(seed))
    a, b = solve_milp(m), solve_milp(m)
    assert a.status == b.status
    assert np.array_equal(a.x, b.x)
    assert (math.isnan(a.objective) and math.isnan(b.objective)) or a.objective == b.objective


def test_highs_warm_start_accepted():
    m = MilpModel()
    xs = [m.add_var(kind=BINARY, obj=-float(v)) for v in (6, 5, 8, 9, 6)]
    m.add_constr({x: float(w) for x, w in zip(xs, (2, 3, 6, 7, 5))}, "<=", 15)
    start = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    sol = solve(m, backend="highs", x0=start)
    assert sol.status == "optimal" and close(sol.objective, brute_force_milp(m))
