"""Two-phase revised simplex with dense LU refactorisation.

Pricing is Dantzig's rule; after a run of degenerate pivots the method falls
back to Bland's rule, which cannot cycle.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as la

from .model import EQ, FEAS_TOL, GE, LE, MilpModel, MilpSolution

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_DEGENERATE_SWITCH = 30


class _StandardForm:
    """min c.z  s.t.  A z = b, z >= 0, with a map back to the model space."""

    def __init__(self, model: MilpModel, lb: np.ndarray, ub: np.ndarray):
        n = model.num_vars
        c = model.cost_vector()
        a = model.matrix().toarray()
        senses = list(model.senses)
        rhs = np.asarray(model.rhs, dtype=float).copy()
        # x_j = offset_j + sign_j * z_p (+ optional negative part for free vars)
        cols = []  # (model var, sign) per standard column
        offset = np.zeros(n)
        extra_rows = []
        self.pos = np.full(n, -1)
        self.neg = np.full(n, -1)
        for j in range(n):
            lo, hi = lb[j], ub[j]
            if math.isfinite(lo):
                offset[j] = lo
                self.pos[j] = len(cols)
                cols.append((j, 1.0))
                if math.isfinite(hi):
                    extra_rows.append((self.pos[j], hi - lo))
            elif math.isfinite(hi):
                offset[j] = hi
                self.pos[j] = len(cols)
                cols.append((j, -1.0))
            else:
                self.pos[j] = len(cols)
                cols.append((j, 1.0))
                self.neg[j] = len(cols)
                cols.append((j, -1.0))
        m0 = a.shape[0]
        nz = len(cols)
        shift = a @ offset if m0 else np.zeros(0)
        b_rows = rhs - shift
        slack_count = sum(1 for s in senses if s != EQ) + len(extra_rows)
        m = m0 + len(extra_rows)
        A = np.zeros((m, nz + slack_count))
        for p, (j, sgn) in enumerate(cols):
            A[:m0, p] = sgn * a[:, j]
        b = np.zeros(m)
        b[:m0] = b_rows
        k = nz
        self.slack_of_row = np.full(m, -1)
        for r, s in enumerate(senses):
            if s == LE:
                A[r, k] = 1.0
            elif s == GE:
                A[r, k] = -1.0
            else:
                continue
            self.slack_of_row[r] = k
            k += 1
        for t, (p, cap) in enumerate(extra_rows):
            r = m0 + t
            A[r, p] = 1.0
            A[r, k] = 1.0
            b[r] = cap
            self.slack_of_row[r] = k
            k += 1
        self.row_sign = np.where(b < 0, -1.0, 1.0)
        A *= self.row_sign[:, None]
        b *= self.row_sign
        cz = np.zeros(A.shape[1])
        for p, (j, sgn) in enumerate(cols):
            cz[p] = sgn * c[j]
        self.A, self.b, self.c = A, b, cz
        self.cols = cols
        self.offset = offset
        self.m0 = m0
        self.const = float(c @ offset) + model.obj_constant

    def to_model(self, z: np.ndarray, n: int) -> np.ndarray:
        x = self.offset.copy()
        for p, (j, sgn) in enumerate(self.cols):
            x[j] += sgn * z[p]
        return x


def _simplex(A, b, c, basis, max_iter, it0=0):
    """Revised simplex from a feasible basis. Returns (status, basis, iters)."""
    m, n = A.shape
    basis = list(basis)
    in_basis = np.zeros(n, dtype=bool)
    in_basis[basis] = True
    degenerate_run = 0
    it = it0
    while True:
        if it >= max_iter:
            return "iteration-limit", basis, it
        B = A[:, basis]
        lu = la.lu_factor(B, check_finite=False)
        xb = la.lu_solve(lu, b, check_finite=False)
        y = la.lu_solve(lu, c[basis], trans=1, check_finite=False)
        d = c - A.T @ y
        d[in_basis] = 0.0
        bland = degenerate_run >= _DEGENERATE_SWITCH
        candidates = np.flatnonzero(d < -_COST_TOL)
        if candidates.size == 0:
            return "optimal", basis, it
        e = int(candidates[0]) if bland else int(candidates[np.argmin(d[candidates])])
        u = la.lu_solve(lu, A[:, e], check_finite=False)
        pos = np.flatnonzero(u > _PIVOT_TOL)
        if pos.size == 0:
            return "unbounded", basis, it
        ratios = np.maximum(xb[pos], 0.0) / u[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12]
        if bland:
            leave = int(min(ties, key=lambda r: basis[r]))
        else:
            leave = int(ties[np.argmax(u[ties])])
        degenerate_run = degenerate_run + 1 if best <= 1e-12 else 0
        in_basis[basis[leave]] = False
        basis[leave] = e
        in_basis[e] = True
        it += 1


def solve_lp(model: MilpModel, lb=None, ub=None, max_iter: int = 20000) -> MilpSolution:
    """Solve the continuous relaxation of ``model``.

    Parameters
    ----------
    model : MilpModel
        Integrality markers are ignored.
    lb, ub : array-like, optional
        Bound overrides (used by branch and bound).
    max_iter : int
        Pivot budget across both phases.

    Returns
    -------
    MilpSolution
        ``status`` is one of ``optimal``, ``infeasible``, ``unbounded`` or
        ``iteration-limit``. On optimal solves ``duals`` holds one multiplier
        per model row, so that ``c - A.T @ duals`` are the reduced costs.
    """
    n = model.num_vars
    lb = np.asarray(model.lb if lb is None else lb, dtype=float)
    ub = np.asarray(model.ub if ub is None else ub, dtype=float)
    if np.any(lb > ub + FEAS_TOL):
        return MilpSolution("infeasible", backend="simplex")
    sf = _StandardForm(model, lb, ub)
    A, b, c = sf.A, sf.b, sf.c
    m, nz = A.shape
    if m == 0:
        if np.any(c < -_COST_TOL):
            return MilpSolution("unbounded", backend="simplex")
        x = sf.to_model(np.zeros(nz), n)
        return MilpSolution("optimal", model.evaluate(x), x, gap=0.0,
                            duals=np.zeros(0), backend="simplex")
    # phase 1: artificial columns appended after the structural ones
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(nz), np.ones(m)])
    basis = list(range(nz, nz + m))
    status, basis, it = _simplex(A1, b, c1, basis, max_iter)
    if status == "iteration-limit":
        return MilpSolution("iteration-limit", iterations=it, backend="simplex")
    xb = la.solve(A1[:, basis], b)
    if c1[basis] @ xb > 1e-7 * max(1.0, np.abs(b).max()):
        return MilpSolution("infeasible", iterations=it, backend="simplex")
    # drive artificials out of the basis; drop rows that stay redundant
    keep_rows = list(range(m))
    for r in range(m):
        if basis[r] < nz:
            continue
        Binv_row = la.solve(A1[:, basis].T, np.eye(m)[r])
        row = Binv_row @ A
        cand = [j for j in range(nz) if j not in basis and abs(row[j]) > 1e-7]
        if cand:
            basis[r] = cand[0]
        else:
            keep_rows.remove(r)
    if len(keep_rows) < m:
        kept = [basis[r] for r in keep_rows]
        A, b = A[keep_rows], b[keep_rows]
        basis = kept
    status, basis, it = _simplex(A, b, c, basis, max_iter, it0=it)
    if status != "optimal":
        return MilpSolution(status, iterations=it, backend="simplex")
    B = A[:, basis]
    z = np.zeros(nz)
    z[basis] = la.solve(B, b)
    z = np.maximum(z, 0.0)
    x = sf.to_model(z, n)
    x = np.clip(x, lb, ub)
    # row multipliers of the standard form, mapped back through row signs
    y_std = np.zeros(m)
    y_std[keep_rows] = la.solve(B.T, c[basis])
    duals = sf.row_sign[:sf.m0] * y_std[:sf.m0]
    return MilpSolution("optimal", model.evaluate(x), x, gap=0.0, bound=model.evaluate(x),
                        iterations=it, duals=duals, backend="simplex")


def dual_objective(model: MilpModel, duals: np.ndarray) -> float:
    """Lagrangian dual value for row multipliers ``duals``.

    Reduced costs are priced against the variable bounds; an infinite bound
    with a reduced cost of the wrong sign yields ``-inf``.
    """
    c = model.cost_vector()
    a = model.matrix()
    d = c - a.T @ duals
    val = float(np.asarray(model.rhs) @ duals) + model.obj_constant
    for j, dj in enumerate(d):
        if abs(dj) <= 1e-9:
            continue
        bound = model.lb[j] if dj > 0 else model.ub[j]
        if math.isinf(bound):
            return -math.inf
        val += dj * bound
    return val


def dual_sign_ok(model: MilpModel, duals: np.ndarray, tol: float = 1e-7) -> bool:
    for s, y in zip(model.senses, duals):
        if s == LE and y > tol:
            return False
        if s == GE and y < -tol:
            return False
    return True
