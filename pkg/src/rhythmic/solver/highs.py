"""HiGHS backend through scipy.optimize, used for the large design models."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

try:
    import highspy as _highspy
except ImportError:  # pragma: no cover - optional accelerator
    _highspy = None

from .model import EQ, GE, LE, MilpModel, MilpSolution

_MILP_STATUS = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded", 4: "error"}


def solve_highs(model: MilpModel, gap_tol: float = 1e-6, time_limit: float | None = None,
                node_limit: int | None = None, relax: bool = False,
                x0=None) -> MilpSolution:
    """Solve ``model`` with HiGHS.

    Continuous models (or ``relax=True``) go through ``linprog`` so that row
    duals are available; anything with integers goes through ``milp``.
    """
    c = model.cost_vector()
    lb = np.asarray(model.lb, dtype=float)
    ub = np.asarray(model.ub, dtype=float)
    integrality = model.integer_mask().astype(int)
    if relax or not integrality.any():
        return _solve_lp(model, c, lb, ub, time_limit)
    if _highspy is not None:
        return _solve_highspy(model, c, lb, ub, integrality, gap_tol, time_limit, node_limit, x0)
    options = {"disp": False, "mip_rel_gap": gap_tol}
    if time_limit is not None:
        options["time_limit"] = time_limit
    if node_limit is not None:
        options["node_limit"] = node_limit
    cons = []
    if model.num_constraints:
        lo, hi = model.row_bounds()
        cons.append(LinearConstraint(model.matrix(), lo, hi))
    res = milp(c, constraints=cons, integrality=integrality, bounds=Bounds(lb, ub), options=options)
    status = _MILP_STATUS.get(res.status, "error")
    if res.x is None:
        if status == "optimal":
            status = "error"
        return MilpSolution(status, backend="highs", message=str(res.message))
    x = np.asarray(res.x, dtype=float)
    mask = integrality.astype(bool)
    x[mask] = np.round(x[mask])
    obj = model.evaluate(x)
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not math.isfinite(bound) else bound + model.obj_constant
    gap = getattr(res, "mip_gap", None)
    gap = 0.0 if gap is None else float(gap)
    return MilpSolution(status, obj, x, gap=gap, bound=bound,
                        nodes=int(getattr(res, "mip_node_count", 0) or 0),
                        backend="highs", message=str(res.message))


def _solve_highspy(model, c, lb, ub, integrality, gap_tol, time_limit, node_limit, x0):
    """Direct HiGHS call; newer than scipy's bundled copy and accepts a MIP start."""
    hs = _highspy
    h = hs.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", float(gap_tol))
    h.setOptionValue("random_seed", 0)
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    if node_limit is not None:
        h.setOptionValue("mip_max_nodes", int(node_limit))
    lp = hs.HighsLp()
    lp.num_col_ = model.num_vars
    lp.num_row_ = model.num_constraints
    lp.col_cost_ = c
    lp.col_lower_ = lb
    lp.col_upper_ = ub
    lo, hi = model.row_bounds()
    lp.row_lower_ = lo
    lp.row_upper_ = hi
    a = model.matrix().tocsc()
    lp.a_matrix_.format_ = hs.MatrixFormat.kColwise
    lp.a_matrix_.start_ = a.indptr
    lp.a_matrix_.index_ = a.indices
    lp.a_matrix_.value_ = a.data
    lp.integrality_ = [hs.HighsVarType.kInteger if v else hs.HighsVarType.kContinuous
                       for v in integrality]
    h.passModel(lp)
    if x0 is not None:
        sol = hs.HighsSolution()
        sol.col_value = list(np.asarray(x0, dtype=float))
        sol.value_valid = True
        h.setSolution(sol)
    h.run()
    ms = h.getModelStatus()
    info = h.getInfo()
    name = h.modelStatusToString(ms).lower()
    if ms == hs.HighsModelStatus.kOptimal:
        status = "optimal"
    elif ms == hs.HighsModelStatus.kInfeasible:
        status = "infeasible"
    elif ms in (hs.HighsModelStatus.kUnbounded, hs.HighsModelStatus.kUnboundedOrInfeasible):
        status = "unbounded"
    elif "limit" in name:
        status = "iteration-limit"
    else:
        status = "error"
    if info.primal_solution_status != 2:  # no feasible point
        if status == "optimal":
            status = "error"
        return MilpSolution(status, backend="highs", message=name)
    x = np.asarray(h.getSolution().col_value, dtype=float)
    mask = integrality.astype(bool)
    x[mask] = np.round(x[mask])
    obj = model.evaluate(x)
    bound = info.mip_dual_bound
    bound = obj if not math.isfinite(bound) else bound + model.obj_constant
    return MilpSolution(status, obj, x, gap=float(max(0.0, info.mip_gap)), bound=bound,
                        nodes=int(info.mip_node_count), backend="highs", message=name)


def _solve_lp(model, c, lb, ub, time_limit):
    a = model.matrix()
    senses = model.senses
    rhs = np.asarray(model.rhs, dtype=float)
    le = [r for r, s in enumerate(senses) if s == LE]
    ge = [r for r, s in enumerate(senses) if s == GE]
    eq = [r for r, s in enumerate(senses) if s == EQ]
    a_ub = b_ub = a_eq = b_eq = None
    if le or ge:
        import scipy.sparse as sp
        a_ub = sp.vstack([a[le], -a[ge]]).tocsr()
        b_ub = np.concatenate([rhs[le], -rhs[ge]])
    if eq:
        a_eq, b_eq = a[eq], rhs[eq]
    options = {"disp": False}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=np.column_stack([lb, ub]), method="highs", options=options)
    status = _MILP_STATUS.get(res.status, "error")
    if res.x is None:
        return MilpSolution(status, backend="highs", message=str(res.message))
    x = np.asarray(res.x, dtype=float)
    duals = np.zeros(model.num_constraints)
    if a_ub is not None and res.ineqlin is not None:
        m = np.asarray(res.ineqlin.marginals)
        duals[le] = m[:len(le)]
        duals[ge] = -m[len(le):]
    if eq and res.eqlin is not None:
        duals[eq] = np.asarray(res.eqlin.marginals)
    obj = model.evaluate(x)
    return MilpSolution(status, obj, x, gap=0.0, bound=obj, iterations=int(res.nit or 0),
                        duals=duals, backend="highs", message=str(res.message))
