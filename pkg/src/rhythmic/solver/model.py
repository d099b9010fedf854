"""Generic linear model container shared by every backend."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

CONTINUOUS, INTEGER, BINARY = "continuous", "integer", "binary"
LE, EQ, GE = "<=", "==", ">="
_SENSE_ALIASES = {"<=": LE, "<": LE, "le": LE, "==": EQ, "=": EQ, "eq": EQ, ">=": GE, ">": GE, "ge": GE}

FEAS_TOL = 1e-7
INT_TOL = 1e-6


class ModelError(ValueError):
    pass


class MilpModel:
    """Minimisation model with sparse linear rows.

    Variables are referenced by the integer index returned from
    :meth:`add_var`. Rows are stored in coordinate form and compiled into a
    CSR matrix lazily; the compiled matrix is cached until the next row is
    added, so repeated solves that only touch bounds stay cheap.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.names: list[str] = []
        self.kinds: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: dict[int, float] = {}
        self.obj_constant = 0.0
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str | None] = []
        self._compiled = None

    # -- building ----------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_constraints(self) -> int:
        return len(self.rhs)

    def add_var(self, name: str | None = None, kind: str = CONTINUOUS,
                lb: float = 0.0, ub: float = math.inf, obj: float = 0.0) -> int:
        if kind not in (CONTINUOUS, INTEGER, BINARY):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if kind != CONTINUOUS and not (math.isfinite(lb) and math.isfinite(ub)):
            raise ModelError(f"integer variable {name} needs finite bounds")
        if lb > ub:
            raise ModelError(f"variable {name}: lb > ub")
        idx = len(self.names)
        self.names.append(name if name is not None else f"x{idx}")
        self.kinds.append(kind)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        if obj:
            self.obj[idx] = float(obj)
        self._compiled = None
        return idx

    def add_constr(self, coefs: Mapping[int, float] | Iterable[tuple[int, float]],
                   sense: str, rhs: float, name: str | None = None) -> int:
        sense = _SENSE_ALIASES.get(sense)
        if sense is None:
            raise ModelError("sense must be one of <=, ==, >=")
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        merged: dict[int, float] = {}
        for j, v in items:
            if not 0 <= j < len(self.names):
                raise ModelError(f"constraint references undeclared variable {j}")
            merged[j] = merged.get(j, 0.0) + float(v)
        r = len(self.rhs)
        for j, v in merged.items():
            if v != 0.0:
                self._rows.append(r)
                self._cols.append(j)
                self._vals.append(v)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name)
        self._compiled = None
        return r

    def set_objective(self, coefs: Mapping[int, float], constant: float = 0.0) -> None:
        self.obj = {j: float(v) for j, v in coefs.items() if v}
        self.obj_constant = float(constant)

    def add_objective(self, j: int, coef: float) -> None:
        self.obj[j] = self.obj.get(j, 0.0) + float(coef)

    def set_bounds(self, j: int, lb: float | None = None, ub: float | None = None) -> None:
        if lb is not None:
            self.lb[j] = float(lb)
        if ub is not None:
            self.ub[j] = float(ub)

    def relaxed(self) -> "MilpModel":
        """Shallow copy with every variable continuous."""
        m = self.copy()
        m.kinds = [CONTINUOUS] * m.num_vars
        return m

    def copy(self) -> "MilpModel":
        m = MilpModel(self.name)
        m.names = list(self.names)
        m.kinds = list(self.kinds)
        m.lb = list(self.lb)
        m.ub = list(self.ub)
        m.obj = dict(self.obj)
        m.obj_constant = self.obj_constant
        m._rows, m._cols, m._vals = self._rows, self._cols, self._vals
        m.senses = list(self.senses)
        m.rhs = list(self.rhs)
        m.row_names = list(self.row_names)
        m._compiled = self._compiled
        return m

    # -- compiled views ----------------------------------------------------
    def matrix(self) -> sp.csr_matrix:
        if self._compiled is None:
            self._compiled = sp.csr_matrix(
                (np.asarray(self._vals, dtype=float),
                 (np.asarray(self._rows, dtype=np.int64), np.asarray(self._cols, dtype=np.int64))),
                shape=(self.num_constraints, self.num_vars))
            self._compiled.sum_duplicates()
        return self._compiled

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for j, v in self.obj.items():
            c[j] = v
        return c

    def integer_mask(self) -> np.ndarray:
        return np.array([k != CONTINUOUS for k in self.kinds], dtype=bool)

    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        rhs = np.asarray(self.rhs, dtype=float)
        lo = np.where([s != LE for s in self.senses], rhs, -np.inf)
        hi = np.where([s != GE for s in self.senses], rhs, np.inf)
        return lo, hi

    def evaluate(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.cost_vector() @ x + self.obj_constant)

    def max_violation(self, x: Sequence[float]) -> float:
        """Largest violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.num_constraints:
            ax = self.matrix() @ x
            lo, hi = self.row_bounds()
            worst = max(worst, float(np.max(np.maximum(lo - ax, 0.0), initial=0.0)),
                        float(np.max(np.maximum(ax - hi, 0.0), initial=0.0)))
        lb, ub = np.asarray(self.lb), np.asarray(self.ub)
        worst = max(worst, float(np.max(np.maximum(lb - x, 0.0), initial=0.0)),
                    float(np.max(np.maximum(x - ub, 0.0), initial=0.0)))
        return worst

    def is_feasible(self, x: Sequence[float], tol: float = 1e-6, int_tol: float = INT_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if self.max_violation(x) > tol:
            return False
        mask = self.integer_mask()
        return bool(np.all(np.abs(x[mask] - np.round(x[mask])) <= int_tol))

    # -- export ------------------------------------------------------------
    def to_lp(self) -> str:
        """Render the model in CPLEX LP text format."""
        names = _lp_names(self.names)

        def expr(pairs):
            parts = []
            for j, v in pairs:
                sign = "-" if v < 0 else "+"
                parts.append(f"{sign} {_fmt(abs(v))} {names[j]}")
            if not parts:
                return "0 " + names[0] if names else "0"
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else text

        lines = [f"\\ {self.name}", "Minimize", " obj: " + expr(sorted(self.obj.items()))]
        lines.append("Subject To")
        a = self.matrix().tocsr()
        for r in range(self.num_constraints):
            lo, hi = a.indptr[r], a.indptr[r + 1]
            pairs = list(zip(a.indices[lo:hi].tolist(), a.data[lo:hi].tolist()))
            sense = {LE: "<=", GE: ">=", EQ: "="}[self.senses[r]]
            rname = _lp_token(self.row_names[r]) if self.row_names[r] else f"c{r}"
            lines.append(f" {rname}: {expr(pairs)} {sense} {_fmt(self.rhs[r])}")
        lines.append("Bounds")
        for j in range(self.num_vars):
            lb, ub = self.lb[j], self.ub[j]
            if lb == 0.0 and math.isinf(ub):
                continue
            if math.isinf(lb) and math.isinf(ub):
                lines.append(f" {names[j]} free")
            else:
                lo = "-inf" if math.isinf(lb) else _fmt(lb)
                hi = "+inf" if math.isinf(ub) else _fmt(ub)
                lines.append(f" {lo} <= {names[j]} <= {hi}")
        gen = [names[j] for j in range(self.num_vars) if self.kinds[j] == INTEGER]
        binv = [names[j] for j in range(self.num_vars) if self.kinds[j] == BINARY]
        if gen:
            lines.append("General")
            lines.extend(" " + n for n in gen)
        if binv:
            lines.append("Binary")
            lines.extend(" " + n for n in binv)
        lines.append("End")
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def _lp_token(name: str) -> str:
    token = re.sub(r"[^A-Za-z0-9_.]", "_", name)
    if not token or token[0].isdigit() or token[0] == ".":
        token = "v_" + token
    return token


def _lp_names(names: Sequence[str]) -> list[str]:
    out, seen = [], set()
    for i, n in enumerate(names):
        t = _lp_token(n)
        if t in seen:
            t = f"{t}_{i}"
        seen.add(t)
        out.append(t)
    return out


@dataclass
class MilpSolution:
    status: str
    objective: float = math.nan
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gap: float = math.nan
    bound: float = math.nan
    nodes: int = 0
    iterations: int = 0
    duals: np.ndarray | None = None
    backend: str = ""
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def value(self, j: int) -> float:
        return float(self.x[j])

    def values(self, idx: Sequence[int]) -> np.ndarray:
        return self.x[np.asarray(idx, dtype=np.int64)]
