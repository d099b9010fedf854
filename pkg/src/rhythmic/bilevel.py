"""Bilevel heuristic: variable neighbourhood search over bus itineraries.

The upper level moves bus entry times and dwell times in multiples of ``T``
with every bus link time held at its minimum. Each candidate is scored by
LP-L; the incumbent is finally re-solved exactly with MILP-L.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .design import (BusItinerary, ObjectiveBreakdown, PlanError, RchPlan, build_lp_l,
                     build_milp_l, evaluate_objective, extract_plan, validate_bus_itinerary)
from .network import Scenario
from .rhythm import BackgroundRhythm, FIFO_VIOLATION, fifo_verdict, realized_travel_time


@dataclass(frozen=True)
class UpperSolution:
    """Bus entry offsets and station dwells, all in seconds and multiples of T.

    ``entry`` maps line id to the offset of its first platoon within the
    RC-H cycle; ``dwell`` maps ``(line, station)`` to the dwell time.
    """

    entry: tuple[tuple[int, float], ...]
    dwell: tuple[tuple[tuple[int, int], float], ...]

    @classmethod
    def build(cls, entry: dict, dwell: dict) -> "UpperSolution":
        return cls(tuple(sorted(entry.items())), tuple(sorted(dwell.items())))

    def entry_map(self) -> dict:
        return dict(self.entry)

    def dwell_map(self) -> dict:
        return dict(self.dwell)

    def vector(self) -> np.ndarray:
        return np.array([v for _, v in self.entry] + [v for _, v in self.dwell], dtype=float)

    def with_vector(self, x) -> "UpperSolution":
        n = len(self.entry)
        return UpperSolution(tuple((k, float(v)) for (k, _), v in zip(self.entry, x[:n])),
                             tuple((k, float(v)) for (k, _), v in zip(self.dwell, x[n:])))


@dataclass
class VnsParams:
    """Search settings. Step lengths default to ``T`` (start, growth) and ``H`` (cap).

    The move probabilities drift linearly from ``(p_lower0, p_upper0)`` at the
    first iteration to ``(p_lower_end, p_upper_end)`` at the last, so fewer
    variables move as the search matures.
    """

    delta0: float | None = None
    delta_step: float | None = None
    delta_max: float | None = None
    p_lower0: float = 0.3
    p_upper0: float = 0.7
    p_lower_end: float = 0.05
    p_upper_end: float = 0.95
    window: int = 50
    max_iter: int = 2000
    seed: int = 0
    batch: int = 1
    check_relaxation: bool = False
    backend: str = "highs"
    milp_time_limit: float | None = None

    def resolved(self, s: Scenario) -> "VnsParams":
        p = replace(self, delta0=self.delta0 or s.T, delta_step=self.delta_step or s.T,
                    delta_max=self.delta_max or s.H)
        if not (0.0 <= p.p_lower0 <= p.p_upper0 <= 1.0):
            raise ValueError("need 0 <= p_lower0 <= p_upper0 <= 1")
        if p.max_iter < 0 or p.window < 1 or p.batch < 1:
            raise ValueError("max_iter >= 0, window >= 1 and batch >= 1 required")
        return p

    def schedule(self, k: int) -> tuple[float, float]:
        frac = k / self.max_iter if self.max_iter else 1.0
        return (self.p_lower0 * (1 - frac) + self.p_lower_end * frac,
                self.p_upper0 * (1 - frac) + self.p_upper_end * frac)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    candidate: float
    incumbent: float
    delta: float
    accepted: bool
    status: str = "ok"


@dataclass(frozen=True)
class RepairReport:
    swaps: int
    flagged: tuple = ()
    cost_delta: float = 0.0


@dataclass
class BilevelResult:
    plan: RchPlan
    upper: UpperSolution
    breakdown: ObjectiveBreakdown
    log: list[IterationRecord]
    lp_objective: float
    milp_objective: float
    repair: RepairReport
    relaxation_violations: list = field(default_factory=list)

    def write_log(self, path) -> None:
        write_iteration_csv(self.log, path)


# ----------------------------------------------------------------------
# upper-level encoding
# ----------------------------------------------------------------------
def _dwell_bounds(s: Scenario, line) -> tuple[float, float]:
    lo = math.ceil(line.min_dwell / s.T - 1e-9) * s.T
    hi = math.floor((s.H - s.epsilon) / s.T) * s.T
    return lo, hi


def _min_delay(rh: BackgroundRhythm, link_id: int, t_min: float) -> int:
    return max(0, math.ceil((t_min - rh.travel_time(link_id)) / rh.T - 1e-9))


def itinerary_of(s: Scenario, rh: BackgroundRhythm, x: UpperSolution) -> BusItinerary:
    """Platoon sequence induced by entry offsets and dwells at minimum link times."""
    Q = s.Q
    entry, dwell = x.entry_map(), x.dwell_map()
    vps = {}
    for line in s.bus_lines:
        if line.id not in entry:
            continue
        q = int(round(entry[line.id] / s.T)) % Q + 1
        for a in s.bus_links(line):
            t_min = a.bus_min_time
            head_station = a.head in line.stations
            if head_station and s.node(a.head).platform == "mainline":
                t_min += dwell[(line.id, a.head)]
            delay = _min_delay(rh, a.id, t_min)
            h = (q - 1 + rh.alpha[a.id] + delay) % Q + 1
            vps[(line.id, a.id)] = (q, h)
            q = h
            if head_station and s.node(a.head).platform == "side":
                q = (h - 1 + int(round(dwell[(line.id, a.head)] / s.T))) % Q + 1
    return BusItinerary(vps)


def _bounds(s: Scenario, x: UpperSolution) -> tuple[np.ndarray, np.ndarray]:
    lines = {b.id: b for b in s.bus_lines}
    lo = [0.0] * len(x.entry)
    hi = [s.H - s.T] * len(x.entry)
    for (p, _), _v in x.dwell:
        a, b = _dwell_bounds(s, lines[p])
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


def _feasible(s: Scenario, rh: BackgroundRhythm, x: UpperSolution) -> bool:
    try:
        validate_bus_itinerary(s, rh, itinerary_of(s, rh, x))
    except PlanError:
        return False
    return True


def initial_bus_plan(s: Scenario, rh: BackgroundRhythm) -> UpperSolution:
    """Minimum dwells, with lines that share links riding in common platoons.

    Lines are placed in id order. A line meeting an already placed line on a
    shared link takes the entry offset that puts it in that line's platoon;
    if the platoon would overflow, or the result clashes anywhere, the
    earliest clash-free offset is used instead.

    Raises
    ------
    PlanError
        No clash-free offset exists for some line.
    """
    dwell = {}
    for line in s.bus_lines:
        lo, _ = _dwell_bounds(s, line)
        for j in line.stations:
            dwell[(line.id, j)] = lo
    entry: dict[int, float] = {}
    placed: list = []
    for line in sorted(s.bus_lines, key=lambda b: b.id):
        candidates = []
        if placed:
            my_links = [a.id for a in s.bus_links(line)]
            trial_base = UpperSolution.build({**entry, line.id: 0.0}, dwell)
            it0 = itinerary_of(s, rh, _restrict(s, trial_base, placed + [line.id]))
            for other in placed:
                shared = [a for a in my_links if (other, a) in it0.vps]
                if not shared:
                    continue
                a = shared[0]
                target = it0.vps[(other, a)][0]
                mine = it0.vps[(line.id, a)][0]
                candidates.append(((target - mine) % s.Q) * s.T)
        candidates += [k * s.T for k in range(s.Q)]
        for off in candidates:
            trial = {**entry, line.id: float(off)}
            x = _restrict(s, UpperSolution.build(trial, dwell), placed + [line.id])
            if _feasible(_subset(s, placed + [line.id]), rh, x):
                entry[line.id] = float(off)
                break
        else:
            raise PlanError(f"no clash-free entry offset for bus line {line.id}")
        placed.append(line.id)
    return UpperSolution.build(entry, dwell)


def bus_only_plan(s: Scenario, rh: BackgroundRhythm) -> RchPlan:
    """Plan with the demand-independent bus itinerary and no car flow."""
    it = itinerary_of(s, rh, initial_bus_plan(s, rh))
    dedicated = it.dedicated()
    return RchPlan({a: set(v) for a, v in dedicated.items()},
                   {a: set(v) for a, v in dedicated.items()}, it)


def _restrict(s: Scenario, x: UpperSolution, lines: list) -> UpperSolution:
    e = {k: v for k, v in x.entry if k in lines}
    d = {k: v for k, v in x.dwell if k[0] in lines}
    return UpperSolution.build(e, d)


def _subset(s: Scenario, lines: list) -> Scenario:
    return replace(s, bus_lines=tuple(b for b in s.bus_lines if b.id in lines))


def local_search_step(s: Scenario, x: UpperSolution, delta: float, p_lower: float,
                      p_upper: float, rng: np.random.Generator) -> UpperSolution:
    """Move each variable down with probability ``p_lower``, up with ``1 - p_upper``.

    Steps are ``delta`` seconds; results are clamped to their bounds and
    snapped to multiples of ``T``.
    """
    v = x.vector()
    draws = rng.random(v.size)
    v = v - delta * (draws < p_lower) + delta * (draws > p_upper)
    lo, hi = _bounds(s, x)
    v = np.clip(np.round(v / s.T) * s.T, lo, hi)
    return x.with_vector(v)


# ----------------------------------------------------------------------
# lower level
# ----------------------------------------------------------------------
class _LowerLevel:
    def __init__(self, s: Scenario, rh: BackgroundRhythm, backend: str):
        self.s, self.rh, self.backend = s, rh, backend
        self.cache: dict = {}

    def __call__(self, x: UpperSolution) -> tuple[float, str]:
        if x in self.cache:
            return self.cache[x]
        it = itinerary_of(self.s, self.rh, x)
        out = (math.inf, "infeasible")
        # near saturation the slow platoons may be the only ones left, so
        # an infeasible pruned model is retried with every platoon available
        for prune in (True, False):
            try:
                dm = build_lp_l(self.s, self.rh, it, prune_slow=prune)
            except PlanError as exc:
                out = (math.inf, f"rejected: {exc}")
                break
            sol = dm.solve(backend=self.backend)
            if sol.status == "optimal":
                out = (sol.objective, "ok" if prune else "ok-unpruned")
                break
            out = (math.inf, sol.status)
        self.cache[x] = out
        return out


def run_bilevel(s: Scenario, rh: BackgroundRhythm, params: VnsParams | None = None,
                start: UpperSolution | None = None) -> BilevelResult:
    """Search bus itineraries with LP-L scoring, then solve MILP-L at the incumbent.

    Returns
    -------
    BilevelResult
        The exact MILP-L plan at the best upper solution, its breakdown, the
        per-iteration log, and the LP-L and MILP-L objectives at that point.
    """
    p = (params or VnsParams()).resolved(s)
    rng = np.random.Generator(np.random.PCG64(p.seed))
    lower = _LowerLevel(s, rh, p.backend)
    x_best = start or initial_bus_plan(s, rh)
    f_best, status = lower(x_best)
    if not math.isfinite(f_best):
        raise PlanError(f"initial bus plan has no feasible lower level ({status})")
    delta, stall = p.delta0, 0
    log: list[IterationRecord] = []
    relax_bad: list = []
    for k in range(1, p.max_iter + 1):
        pl, pu = p.schedule(k)
        best_y, best_fy, best_status = None, math.inf, "ok"
        for _ in range(p.batch):
            y = local_search_step(s, x_best, delta, pl, pu, rng)
            fy, st = lower(y)
            if best_y is None or fy < best_fy:
                best_y, best_fy, best_status = y, fy, st
        accepted = best_fy < f_best - 1e-9
        if accepted:
            x_best, f_best = best_y, best_fy
            delta, stall = p.delta0, 0
            if p.check_relaxation:
                exact = _milp_l(s, rh, x_best, p, prune_slow=best_status == "ok")[1]
                if exact < f_best - 1e-6 * max(1.0, abs(exact)):
                    relax_bad.append((k, f_best, exact))
        else:
            stall += 1
            if stall >= p.window:
                delta, stall = min(delta + p.delta_step, p.delta_max), 0
        log.append(IterationRecord(k, best_fy, f_best, delta, accepted, best_status))
    plan, milp_obj = _milp_l(s, rh, x_best, p)
    lp_plan = _lp_plan(s, rh, x_best, p)
    _, report = repair_fifo_violations(s, rh, lp_plan)
    return BilevelResult(plan, x_best, evaluate_objective(s, rh, plan), log, f_best, milp_obj,
                         report, relax_bad)


def _milp_l(s, rh, x, p: VnsParams, prune_slow: bool = False):
    dm = build_milp_l(s, rh, itinerary_of(s, rh, x), prune_slow=prune_slow)
    sol = dm.solve(backend=p.backend, time_limit=p.milp_time_limit)
    if sol.status not in ("optimal", "iteration-limit") or sol.x.size == 0:
        raise PlanError(f"MILP-L at the incumbent ended with status {sol.status}")
    return extract_plan(dm, sol), sol.objective


def _lp_plan(s, rh, x, p: VnsParams) -> RchPlan:
    it = itinerary_of(s, rh, x)
    for prune in (True, False):
        dm = build_lp_l(s, rh, it, prune_slow=prune)
        sol = dm.solve(backend=p.backend)
        if sol.status == "optimal":
            break
    return extract_plan(dm, sol, validate=False)


# ----------------------------------------------------------------------
# FIFO repair
# ----------------------------------------------------------------------
def repair_fifo_violations(s: Scenario, rh: BackgroundRhythm,
                           plan: RchPlan) -> tuple[RchPlan, RepairReport]:
    """Uncross crossing car flows by exchanging their departure platoons.

    For two crossing platoons on a link that carry flow of the same path,
    the common volume is re-routed so the earlier arrival takes the earlier
    departure. Crossing flows of different destinations are not touched and
    are listed in the report; so are same-destination flows on different
    paths, whose downstream legs would also have to be exchanged.
    """
    Q = s.Q
    pi = dict(plan.pi)
    flagged = []
    swaps = 0
    cost_before = _car_cost(rh, pi)
    dest = {w: d.destination for w, d in enumerate(s.demands)}
    changed = True
    guard = 0
    while changed and guard < 10000:
        changed = False
        guard += 1
        by_link: dict = {}
        for (w, r, a, q, h), v in pi.items():
            if v > 1e-9 and not s.link(a).virtual:
                by_link.setdefault(a, []).append((w, r, q, h, v))
        for a, items in sorted(by_link.items()):
            alpha = rh.alpha[a]
            for i in range(len(items)):
                for j in range(i + 1, len(items)):
                    wm, rm, qm, hm, vm = items[i]
                    wn, rn, qn, hn, vn = items[j]
                    if (qm, hm) == (qn, hn):
                        continue
                    if fifo_verdict(alpha, (qm, hm), (qn, hn), Q) != FIFO_VIOLATION:
                        continue
                    if (wm, rm) != (wn, rn):
                        key = (a, (qm, hm), (qn, hn),
                               "same destination" if dest[wm] == dest[wn] else "different destination")
                        if key not in flagged:
                            flagged.append(key)
                        continue
                    v = min(vm, vn)
                    for (qq, hh), dv in (((qm, hm), -v), ((qn, hn), -v), ((qm, hn), v), ((qn, hm), v)):
                        k = (wm, rm, a, qq, hh)
                        pi[k] = pi.get(k, 0.0) + dv
                        if abs(pi[k]) < 1e-12:
                            del pi[k]
                    swaps += 1
                    changed = True
                    break
                if changed:
                    break
            if changed:
                break
    out = RchPlan({a: set(v) for a, v in plan.realized.items()},
                  {a: set(v) for a, v in plan.dedicated.items()},
                  BusItinerary(dict(plan.bus.vps)), dict(plan.path_flow), pi, dict(plan.pi_reg))
    out.realized = {a: set(v) for a, v in plan.dedicated.items()}
    for (w, r, a, q, h), v in pi.items():
        if not s.link(a).virtual and v > 1e-9:
            out.realized.setdefault(a, set()).add((q, h))
    return out, RepairReport(swaps, tuple(flagged), _car_cost(rh, pi) - cost_before)


def _car_cost(rh: BackgroundRhythm, pi: dict) -> float:
    return sum(v * realized_travel_time(rh, a, q, h)[0] for (w, r, a, q, h), v in pi.items())


def write_iteration_csv(log: list[IterationRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "candidate", "incumbent", "delta", "accepted", "status"])
        for r in log:
            w.writerow([r.iteration, _fmt(r.candidate), _fmt(r.incumbent), _fmt(r.delta),
                        int(r.accepted), r.status])


def _fmt(v: float) -> str:
    return "inf" if not math.isfinite(v) else f"{v:.6f}"
