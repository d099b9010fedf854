"""Best-first branch and bound over the simplex LP relaxation."""
from __future__ import annotations

import heapq
import itertools
import math

import numpy as np

from .model import INT_TOL, MilpModel, MilpSolution
from .simplex import solve_lp


def relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    return max(0.0, incumbent - bound) / max(abs(incumbent), 1e-10)


def branch_and_bound(model: MilpModel, gap_tol: float = 1e-6, node_limit: int = 100000,
                     lp_iter_limit: int = 20000) -> MilpSolution:
    """Solve ``model`` to proven optimality or until ``node_limit``.

    Nodes are explored in order of their LP bound. The branching variable is
    the integer variable whose fractional part is closest to one half, ties
    broken by lowest index.

    Returns
    -------
    MilpSolution
        ``nodes`` counts branched nodes. On hitting the node limit the status
        is ``iteration-limit`` and ``x`` holds the incumbent, if any.
    """
    mask = model.integer_mask()
    int_idx = np.flatnonzero(mask)
    lb0 = np.asarray(model.lb, dtype=float)
    ub0 = np.asarray(model.ub, dtype=float)
    incumbent, inc_x = math.inf, None
    counter = itertools.count()
    nodes = 0
    iters = 0

    root = solve_lp(model, lb0, ub0, max_iter=lp_iter_limit)
    iters += root.iterations
    if root.status in ("infeasible", "unbounded", "iteration-limit"):
        return MilpSolution(root.status, nodes=0, iterations=iters, backend="bnb")
    heap = [(root.objective, next(counter), lb0, ub0, root)]
    limited = False
    while heap:
        bound, _, lb, ub, sol = heap[0]
        if relative_gap(incumbent, bound) <= gap_tol:
            break
        heapq.heappop(heap)
        x = sol.x
        frac = np.abs(x[int_idx] - np.round(x[int_idx]))
        fractional = int_idx[frac > INT_TOL]
        if fractional.size == 0:
            if sol.objective < incumbent:
                incumbent, inc_x = sol.objective, x.copy()
                inc_x[int_idx] = np.round(inc_x[int_idx])
            continue
        if nodes >= node_limit:
            heapq.heappush(heap, (bound, next(counter), lb, ub, sol))
            limited = True
            break
        nodes += 1
        closeness = np.abs((x[fractional] - np.floor(x[fractional])) - 0.5)
        j = int(fractional[np.argmin(closeness)])  # argmin keeps the lowest index on ties
        v = x[j]
        for lo, hi in ((lb[j], math.floor(v)), (math.ceil(v), ub[j])):
            if lo > hi:
                continue
            nlb, nub = lb.copy(), ub.copy()
            nlb[j], nub[j] = lo, hi
            child = solve_lp(model, nlb, nub, max_iter=lp_iter_limit)
            iters += child.iterations
            if child.status != "optimal" or child.objective >= incumbent:
                continue
            heapq.heappush(heap, (child.objective, next(counter), nlb, nub, child))
    if inc_x is None:
        status = "iteration-limit" if limited else "infeasible"
        return MilpSolution(status, nodes=nodes, iterations=iters, backend="bnb")
    best_bound = min(heap[0][0], incumbent) if heap else incumbent
    gap = relative_gap(incumbent, best_bound)
    status = "iteration-limit" if limited and gap > gap_tol else "optimal"
    return MilpSolution(status, incumbent, inc_x, gap=gap, bound=best_bound,
                        nodes=nodes, iterations=iters, backend="bnb")
