"""Linear and mixed-integer solvers behind one model API.

Two backends are available: ``"bnb"`` (dense revised simplex plus best-first
branch and bound, suited to small models and used as a cross-check) and
``"highs"`` (HiGHS through highspy when installed, otherwise scipy's bundled
copy; used for the full design models).
"""
from __future__ import annotations

from .bnb import branch_and_bound, relative_gap
from .highs import solve_highs
from .model import (BINARY, CONTINUOUS, EQ, FEAS_TOL, GE, INT_TOL, INTEGER, LE, MilpModel,
                    MilpSolution, ModelError)
from .simplex import dual_objective, dual_sign_ok, solve_lp

BACKENDS = ("bnb", "highs")


class SolverError(RuntimeError):
    """Raised when a backend fails in a way callers cannot recover from."""


def solve_milp(model: MilpModel, gap_tol: float = 1e-6, node_limit: int = 100000) -> MilpSolution:
    """Best-first branch and bound with the in-house simplex."""
    return branch_and_bound(model, gap_tol=gap_tol, node_limit=node_limit)


def solve(model: MilpModel, backend: str = "highs", gap_tol: float = 1e-6,
          node_limit: int | None = None, time_limit: float | None = None,
          x0=None) -> MilpSolution:
    """Solve ``model`` with the chosen backend.

    Parameters
    ----------
    model : MilpModel
    backend : {"highs", "bnb"}
    gap_tol : float
        Relative optimality gap at which a MILP counts as solved.
    node_limit : int, optional
        Branching budget. Exhausting it yields status ``iteration-limit``.
    time_limit : float, optional
        Seconds; honoured by HiGHS only.
    x0 : array_like, optional
        Feasible starting point for HiGHS.
    """
    if backend == "bnb":
        if not model.integer_mask().any():
            return solve_lp(model)
        return branch_and_bound(model, gap_tol=gap_tol,
                                node_limit=100000 if node_limit is None else node_limit)
    if backend == "highs":
        return solve_highs(model, gap_tol=gap_tol, time_limit=time_limit, node_limit=node_limit,
                           x0=x0)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


__all__ = [
    "BACKENDS", "BINARY", "CONTINUOUS", "EQ", "FEAS_TOL", "GE", "INT_TOL", "INTEGER", "LE",
    "MilpModel", "MilpSolution", "ModelError", "SolverError", "branch_and_bound",
    "dual_objective", "dual_sign_ok", "relative_gap", "solve", "solve_highs", "solve_lp", "solve_milp",
]
