"""Joint design models: MILP-O, MILP-L and LP-L, plus plan extraction.

All three models share one layout. A realized platoon on a link is indexed
by the pair ``(q, q_hat)`` of its arrival and departure platoon numbers.
Car volumes are counted per RC-H cycle, path flows ``f`` in vehicles per
second, so a path entrance receives ``T * f`` vehicles in every platoon slot.

Virtual entrance links are waiting zones: they carry car volumes on any
``(q, q_hat)`` pair without realization binaries, occupancy or FIFO rows.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .network import Scenario
from .rhythm import (BackgroundRhythm, fifo_verdict, max_admissible_traffic,
                     realized_travel_time, FIFO_VIOLATION)
from .solver import BINARY, INTEGER, MilpModel, MilpSolution, solve

PLAN_FORMAT = "rch-plan"
PLAN_VERSION = 1
_TOL = 1e-6


class PlanError(ValueError):
    """A plan or fixed bus itinerary violates a structural invariant."""


# ----------------------------------------------------------------------
# plan records
# ----------------------------------------------------------------------
@dataclass
class BusItinerary:
    """Dedicated platoon of every bus on every link of its route.

    ``vps`` maps ``(line, link)`` to ``(q, q_hat)``. Dwell times at
    side-platform stations follow from consecutive platoon numbers; at
    mainline stations the dwell is part of the incoming link time.
    """

    vps: dict = field(default_factory=dict)

    def dwell(self, s: Scenario, line_id: int) -> dict[int, float]:
        line = next(b for b in s.bus_lines if b.id == line_id)
        links = s.bus_links(line)
        out = {}
        for a, b in zip(links[:-1], links[1:]):
            j = a.head
            if j in line.stations and s.node(j).platform == "side":
                h = self.vps[(line.id, a.id)][1]
                q = self.vps[(line.id, b.id)][0]
                out[j] = ((q - h) % s.Q) * s.T
        return out

    def link_time(self, rh: BackgroundRhythm, line_id: int, link_id: int) -> float:
        q, h = self.vps[(line_id, link_id)]
        return realized_travel_time(rh, link_id, q, h)[0]

    def dedicated(self) -> dict[int, set]:
        out: dict[int, set] = {}
        for (_, a), vp in self.vps.items():
            out.setdefault(a, set()).add(tuple(vp))
        return out


@dataclass
class RchPlan:
    """Realized and dedicated platoons, bus itineraries and car flows.

    Attributes
    ----------
    realized, dedicated : dict
        Link id to a set of ``(q, q_hat)`` pairs.
    bus : BusItinerary
    path_flow : dict
        ``(demand index, path index)`` to vehicles per second.
    pi : dict
        ``(demand, path, link, q, q_hat)`` to mixed-lane volume per RC-H cycle.
    pi_reg : dict
        ``(demand, path, link, q)`` to regular-lane volume on the background
        platoon entering at ``q``.
    """

    realized: dict = field(default_factory=dict)
    dedicated: dict = field(default_factory=dict)
    bus: BusItinerary = field(default_factory=BusItinerary)
    path_flow: dict = field(default_factory=dict)
    pi: dict = field(default_factory=dict)
    pi_reg: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Costs in person-seconds per RC-H cycle.

    ``O`` is the weighted objective ``(1 - omega) * O_a + omega * O_b``;
    ``total`` is the unweighted ``O_a + O_b`` used when reporting both costs together.
    """

    O_a: float
    O_b: float
    O: float
    total: float
    O_a_m: float
    O_b_m: float
    omega: float

    @property
    def O_m(self) -> float:
        return self.O_a_m + self.O_b_m

    @staticmethod
    def _gap(v, ref):
        return (v - ref) / ref if ref else 0.0

    @property
    def dO_a(self) -> float:
        return self._gap(self.O_a, self.O_a_m)

    @property
    def dO_b(self) -> float:
        return self._gap(self.O_b, self.O_b_m)

    @property
    def dO(self) -> float:
        return self._gap(self.total, self.O_m)

    def table_row(self) -> dict:
        return {"O_a_m": self.O_a_m, "O_a_opt": self.O_a, "dO_a": self.dO_a,
                "O_b_m": self.O_b_m, "O_b_opt": self.O_b, "dO_b": self.dO_b,
                "O_m": self.O_m, "O_opt": self.total, "dO": self.dO}


# ----------------------------------------------------------------------
# shared layout
# ----------------------------------------------------------------------
@lru_cache(maxsize=64)
def _fifo_pairs(alpha: int, Q: int) -> tuple[tuple[int, int], ...]:
    """Index pairs ``(k1, k2)``, ``k1 < k2``, of crossing platoons."""
    pairs = [(q, h) for q in range(1, Q + 1) for h in range(1, Q + 1)]
    out = []
    for k1 in range(len(pairs)):
        m = pairs[k1]
        for k2 in range(k1 + 1, len(pairs)):
            n = pairs[k2]
            if fifo_verdict(alpha, m, n, Q) == FIFO_VIOLATION:
                out.append((k1, k2))
    return tuple(out)


def bus_min_time(s: Scenario, line, link) -> float:
    """Minimum bus time on ``link``, including a mainline dwell at its head."""
    t = link.bus_min_time
    if link.head in line.stations and s.node(link.head).platform == "mainline":
        t += line.min_dwell
    return t


class _Layout:
    def __init__(self, s: Scenario, rh: BackgroundRhythm):
        self.s, self.rh = s, rh
        Q = self.Q = s.Q
        self.pairs = [(q, h) for q in range(1, Q + 1) for h in range(1, Q + 1)]
        self.tt = {a.id: np.array([realized_travel_time(rh, a.id, q, h)[0] for q, h in self.pairs])
                   for a in s.links}
        self.paths = [(w, r, tuple(p)) for w, d in enumerate(s.demands) for r, p in enumerate(d.paths)]
        self.path_links = sorted({a for _, _, p in self.paths for a in p})
        self.lines = {b.id: b for b in s.bus_lines}
        self.bus_on: dict[int, list[int]] = {}
        self.allowed: dict[tuple[int, int], list[int]] = {}
        for b in s.bus_lines:
            for a in s.bus_links(b):
                self.bus_on.setdefault(a.id, []).append(b.id)
                tmin = bus_min_time(s, b, a)
                self.allowed[(b.id, a.id)] = [k for k in range(Q * Q)
                                              if self.tt[a.id][k] >= tmin - 1e-9]

    def k(self, q: int, h: int) -> int:
        return (q - 1) * self.Q + (h - 1)

    def real(self, a: int) -> bool:
        return not self.s.link(a).virtual

    def bg_exit(self, a: int, q: int) -> int:
        return (q - 1 + self.rh.alpha[a]) % self.Q + 1


def _flow_block(m: MilpModel, L: _Layout, cand: dict, omega: float):
    """Path flows, volumes, entrance/exit and conservation rows.

    ``cand`` maps link id to the pair indices that may carry mixed-lane
    volume. Returns (f, pi, pireg) variable maps.
    """
    s, Q, T, H = L.s, L.Q, L.s.T, L.s.H
    f, pi, pireg = {}, {}, {}
    wa = 1.0 - omega
    for w, r, path in L.paths:
        f[(w, r)] = m.add_var(f"f_{w}_{r}")
        for a in path:
            link = s.link(a)
            for k in cand[a]:
                q, h = L.pairs[k]
                pi[(w, r, a, k)] = m.add_var(f"pi_{w}_{r}_{a}_{q}_{h}", obj=wa * L.tt[a][k])
            if link.lanes > 1 and not link.virtual:
                t_a = L.rh.travel_time(a)
                for q in range(1, Q + 1):
                    pireg[(w, r, a, q)] = m.add_var(f"pr_{w}_{r}_{a}_{q}", obj=wa * t_a)
    by_link: dict = {}
    for (w, r, a, k), v in pi.items():
        by_link.setdefault((w, r, a), []).append((k, v))

    def lam(w, r, a, q):
        row = {v: 1.0 for k, v in by_link.get((w, r, a), ()) if L.pairs[k][0] == q}
        if (w, r, a, q) in pireg:
            row[pireg[(w, r, a, q)]] = row.get(pireg[(w, r, a, q)], 0.0) + 1.0
        return row

    def mu(w, r, a, h):
        row = {v: 1.0 for k, v in by_link.get((w, r, a), ()) if L.pairs[k][1] == h}
        qb = (h - 1 - L.rh.alpha[a]) % Q + 1
        if (w, r, a, qb) in pireg:
            row[pireg[(w, r, a, qb)]] = row.get(pireg[(w, r, a, qb)], 0.0) + 1.0
        return row

    for w, r, path in L.paths:
        fv = f[(w, r)]
        first, last = path[0], path[-1]
        for q in range(1, Q + 1):
            row = lam(w, r, first, q)
            row[fv] = row.get(fv, 0.0) - T
            m.add_constr(row, "==", 0.0, f"enter_{w}_{r}_{q}")
        for a, b in zip(path[:-1], path[1:]):
            for sl in range(1, Q + 1):
                row = dict(mu(w, r, a, sl))
                for v, c in lam(w, r, b, sl).items():
                    row[v] = row.get(v, 0.0) - c
                m.add_constr(row, "==", 0.0, f"cons_{w}_{r}_{a}_{b}_{sl}")
        row = {}
        for h in range(1, Q + 1):
            for v, c in mu(w, r, last, h).items():
                row[v] = row.get(v, 0.0) + c
        row[fv] = row.get(fv, 0.0) - H
        m.add_constr(row, "==", 0.0, f"exit_{w}_{r}")
    for w, d in enumerate(s.demands):
        row = {f[(w, r)]: 1.0 for r in range(len(d.paths))}
        if row:
            m.add_constr(row, "==", d.rate / T, f"demand_{w}")
        elif d.rate > 0:
            raise PlanError(f"demand {d.key} has no candidate paths")
    # regular-lane capacity
    reg_groups: dict = {}
    for (w, r, a, q), v in pireg.items():
        reg_groups.setdefault((a, q), []).append(v)
    for (a, q), vs in reg_groups.items():
        cap = L.rh.size[a] * (s.link(a).lanes - 1)
        m.add_constr({v: 1.0 for v in vs}, "<=", cap, f"regcap_{a}_{q}")
    return f, pi, pireg


def _group_pi(pi: dict) -> dict:
    out: dict = {}
    for (w, r, a, k), v in pi.items():
        out.setdefault((a, k), []).append(v)
    return out


def _check_demand(s: Scenario) -> None:
    try:
        cap = max_admissible_traffic(s)
    except Exception:  # missing paths are reported by the builders
        return
    for d in s.demands:
        if d.rate * s.Q > cap.per_od.get(d.key, math.inf) + 1e-9:
            warnings.warn(f"demand {d.key} exceeds its admissible bound "
                          f"({d.rate * s.Q:.1f} > {cap.per_od[d.key]} veh per RC-H cycle)",
                          stacklevel=3)


@dataclass
class DesignModel:
    """A built model plus the variable maps needed to read a solution."""

    kind: str
    model: MilpModel
    layout: _Layout
    omega: float
    theta: dict = field(default_factory=dict)
    ded: dict = field(default_factory=dict)
    bus: dict = field(default_factory=dict)
    f: dict = field(default_factory=dict)
    pi: dict = field(default_factory=dict)
    pireg: dict = field(default_factory=dict)
    fixed_bus: BusItinerary | None = None
    available: dict | None = None
    phi: dict = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return self.model.num_vars

    def solve(self, backend: str = "highs", **kw) -> MilpSolution:
        return solve(self.model, backend=backend, **kw)


# ----------------------------------------------------------------------
# MILP-O
# ----------------------------------------------------------------------
def build_milp_o(s: Scenario, rh: BackgroundRhythm, omega: float | None = None,
                 break_symmetry: bool = True) -> DesignModel:
    """Joint model over platoons, bus itineraries and car assignment.

    Parameters
    ----------
    s : Scenario
        Demands must carry candidate paths.
    rh : BackgroundRhythm
    omega : float, optional
        Bus priority weight; defaults to ``s.omega``.
    break_symmetry : bool
        Pin the first bus line's first platoon to arrival slot 1.

    Returns
    -------
    DesignModel
        Objective ``(1 - omega) * O_a + omega * O_b``.
    """
    omega = s.omega if omega is None else omega
    _check_demand(s)
    L = _Layout(s, rh)
    m = MilpModel("milp-o")
    Q, T, H, eps = L.Q, s.T, s.H, s.epsilon
    theta, ded, bus, phis = {}, {}, {}, {}
    for a in L.path_links + sorted(L.bus_on):
        if not L.real(a) or a in theta:
            continue
        theta[a] = {k: m.add_var(f"th_{a}_{q}_{h}", BINARY) for k, (q, h) in enumerate(L.pairs)}
    _occupancy_and_fifo(m, L, theta)
    # Shifting every slot index by one constant maps plans to plans of equal
    # cost, so the first line's first platoon may be pinned to arrival slot 1.
    pinned = None
    if break_symmetry and s.bus_lines:
        first = min(s.bus_lines, key=lambda b: b.id)
        pinned = (first.id, s.bus_links(first)[0].id)
    for (p, a), ks in L.allowed.items():
        if (p, a) == pinned:
            ks = [k for k in ks if L.pairs[k][0] == 1]
        line = L.lines[p]
        bus[(p, a)] = {k: m.add_var(f"bus_{p}_{a}_{L.pairs[k][0]}_{L.pairs[k][1]}", BINARY,
                                    obj=omega * line.passengers * L.tt[a][k]) for k in ks}
        if not ks:
            raise PlanError(f"bus line {p} cannot traverse link {a} within one RC-H cycle")
        m.add_constr({v: 1.0 for v in bus[(p, a)].values()}, "==", 1.0, f"onevp_{p}_{a}")
    for a, lines in L.bus_on.items():
        ks = sorted({k for p in lines for k in L.allowed[(p, a)]})
        ded[a] = {}
        for k in ks:
            q, h = L.pairs[k]
            d = ded[a][k] = m.add_var(f"ded_{a}_{q}_{h}", BINARY)
            users = [bus[(p, a)][k] for p in lines if k in bus[(p, a)]]
            size = {p: L.lines[p].size for p in lines}
            row = {d: -float(L.rh.size[a])}
            for p in lines:
                if k in bus[(p, a)]:
                    row[bus[(p, a)][k]] = float(size[p])
            m.add_constr(row, "<=", 0.0, f"dedcap_{a}_{q}_{h}")
            row = {d: 1.0}
            for u in users:
                row[u] = row.get(u, 0.0) - 1.0
            m.add_constr(row, "<=", 0.0, f"dedlink_{a}_{q}_{h}")
            for u in users:
                m.add_constr({d: 1.0, u: -1.0}, ">=", 0.0)
            m.add_constr({d: 1.0, theta[a][k]: -1.0}, "<=", 0.0, f"dedreal_{a}_{q}_{h}")
    for line in s.bus_lines:
        links = s.bus_links(line)
        for a, b in zip(links[:-1], links[1:]):
            j = a.head
            va, vb = bus[(line.id, a.id)], bus[(line.id, b.id)]
            if j in line.stations and s.node(j).platform == "side":
                phi = phis[(line.id, j)] = m.add_var(f"phid_{line.id}_{j}", INTEGER, 0, 1,
                                                     obj=omega * line.passengers * H)
                row = {phi: H}
                for k, v in vb.items():
                    row[v] = row.get(v, 0.0) + T * L.pairs[k][0]
                for k, v in va.items():
                    row[v] = row.get(v, 0.0) - T * L.pairs[k][1]
                m.add_constr(row, ">=", line.min_dwell, f"dwell_lo_{line.id}_{j}")
                m.add_constr(row, "<=", H - eps, f"dwell_hi_{line.id}_{j}")
                for v, c in row.items():
                    if v != phi:
                        m.add_objective(v, omega * line.passengers * c)
            else:
                for sl in range(1, Q + 1):
                    row = {v: 1.0 for k, v in va.items() if L.pairs[k][1] == sl}
                    for k, v in vb.items():
                        if L.pairs[k][0] == sl:
                            row[v] = row.get(v, 0.0) - 1.0
                    m.add_constr(row, "==", 0.0, f"conn_{line.id}_{j}_{sl}")
    cand = {a: range(Q * Q) for a in L.path_links}
    f, pi, pireg = _flow_block(m, L, cand, omega)
    for (a, k), vs in _group_pi(pi).items():
        if not L.real(a):
            continue
        q, h = L.pairs[k]
        row = {v: 1.0 for v in vs}
        row[theta[a][k]] = -float(L.rh.size[a])
        if a in ded and k in ded[a]:
            row[ded[a][k]] = float(L.rh.size[a])
        m.add_constr(row, "<=", 0.0, f"cap_{a}_{q}_{h}")
    return DesignModel("milp-o", m, L, omega, theta, ded, bus, f, pi, pireg, phi=phis)


def _occupancy_and_fifo(m: MilpModel, L: _Layout, theta: dict) -> None:
    Q = L.Q
    for a, th in theta.items():
        for q in range(1, Q + 1):
            m.add_constr({th[L.k(q, h)]: 1.0 for h in range(1, Q + 1) if L.k(q, h) in th},
                         "<=", 1.0, f"occ_in_{a}_{q}")
            m.add_constr({th[L.k(h, q)]: 1.0 for h in range(1, Q + 1) if L.k(h, q) in th},
                         "<=", 1.0, f"occ_out_{a}_{q}")
        for k1, k2 in _fifo_pairs(L.rh.alpha[a], Q):
            if k1 in th and k2 in th:
                m.add_constr({th[k1]: 1.0, th[k2]: 1.0}, "<=", 1.0)


# ----------------------------------------------------------------------
# lower level
# ----------------------------------------------------------------------
def validate_bus_itinerary(s: Scenario, rh: BackgroundRhythm, it: BusItinerary) -> None:
    """Check a fixed bus plan before it is handed to the lower level.

    Raises
    ------
    PlanError
        Missing link, too-fast platoon, broken connectivity, dwell out of
        bounds, occupancy or FIFO clash between dedicated platoons, or more
        buses in a platoon than it can hold.
    """
    Q, T, H, eps = s.Q, s.T, s.H, s.epsilon
    for line in s.bus_lines:
        links = s.bus_links(line)
        for a in links:
            if (line.id, a.id) not in it.vps:
                raise PlanError(f"bus line {line.id}: no platoon on link {a.id}")
            q, h = it.vps[(line.id, a.id)]
            t = realized_travel_time(rh, a.id, q, h)[0]
            if t < bus_min_time(s, line, a) - 1e-9:
                raise PlanError(f"bus line {line.id}: platoon {q}->{h} too fast on link {a.id}")
        for a, b in zip(links[:-1], links[1:]):
            j = a.head
            h = it.vps[(line.id, a.id)][1]
            q = it.vps[(line.id, b.id)][0]
            if j in line.stations and s.node(j).platform == "side":
                dwell = ((q - h) % Q) * T
                if not (line.min_dwell - 1e-9 <= dwell <= H - eps):
                    raise PlanError(f"bus line {line.id}: dwell {dwell} at station {j} out of bounds")
            elif q != h:
                raise PlanError(f"bus line {line.id}: broken connectivity at node {j}")
    count: dict = {}
    for (p, a), vp in it.vps.items():
        size = next(b.size for b in s.bus_lines if b.id == p)
        count[(a, tuple(vp))] = count.get((a, tuple(vp)), 0) + size
    for (a, vp), used in count.items():
        if used > rh.size[a]:
            raise PlanError(f"link {a}: platoon {vp} holds more buses than its size")
    for a, vps in it.dedicated().items():
        vps = sorted(vps)
        qs = [v[0] for v in vps]
        hs = [v[1] for v in vps]
        if len(set(qs)) != len(qs) or len(set(hs)) != len(hs):
            raise PlanError(f"link {a}: dedicated platoons share a slot")
        for x in range(len(vps)):
            for y in range(x + 1, len(vps)):
                if fifo_verdict(rh.alpha[a], vps[x], vps[y], Q) == FIFO_VIOLATION:
                    raise PlanError(f"link {a}: dedicated platoons {vps[x]} and {vps[y]} cross")


def bus_cost(s: Scenario, rh: BackgroundRhythm, it: BusItinerary) -> float:
    """Passenger-weighted bus travel cost ``O_b`` of an itinerary."""
    total = 0.0
    for line in s.bus_lines:
        t = sum(it.link_time(rh, line.id, a.id) for a in s.bus_links(line))
        t += sum(it.dwell(s, line.id).values())
        total += line.passengers * t
    return total


def available_platoons(s: Scenario, rh: BackgroundRhythm, it: BusItinerary,
                       prune_slow: bool = True) -> dict[int, set[int]]:
    """Pair indices cars may use per link under a fixed bus plan.

    Excludes platoons that share an arrival or departure slot with a
    dedicated platoon or cross one, and with ``prune_slow`` also those
    slower than the slowest bus on the link.
    """
    L = _Layout(s, rh)
    ded = it.dedicated()
    out = {}
    for a in L.path_links:
        if not L.real(a):
            continue
        keep = set(range(L.Q * L.Q))
        dv = ded.get(a, set())
        if dv:
            slots_in = {v[0] for v in dv}
            slots_out = {v[1] for v in dv}
            limit = max(it.link_time(rh, p, a) for p in L.bus_on.get(a, [])) if prune_slow else math.inf
            for k in list(keep):
                q, h = L.pairs[k]
                if q in slots_in or h in slots_out or L.tt[a][k] > limit + 1e-9:
                    keep.discard(k)
                    continue
                if any(fifo_verdict(rh.alpha[a], (q, h), v, L.Q) == FIFO_VIOLATION for v in dv):
                    keep.discard(k)
        out[a] = keep
    return out


def build_milp_l(s: Scenario, rh: BackgroundRhythm, it: BusItinerary,
                 omega: float | None = None, prune_slow: bool = False) -> DesignModel:
    """Car assignment with platoon binaries and FIFO under a fixed bus plan.

    The objective carries ``omega * O_b`` of the fixed plan as a constant, so
    its optimal value is the full weighted objective. With ``prune_slow`` the
    candidate platoons are those of :func:`available_platoons`, which makes
    LP-L a relaxation of this model.
    """
    omega = s.omega if omega is None else omega
    validate_bus_itinerary(s, rh, it)
    _check_demand(s)
    L = _Layout(s, rh)
    m = MilpModel("milp-l")
    ded = it.dedicated()
    avail = available_platoons(s, rh, it, prune_slow=prune_slow) if prune_slow else None
    theta = {}
    for a in L.path_links + sorted(ded):
        if not L.real(a) or a in theta:
            continue
        dks = {L.k(*v) for v in ded.get(a, ())}
        theta[a] = {}
        for k, (q, h) in enumerate(L.pairs):
            if avail is not None and a in avail and k not in avail[a] and k not in dks:
                continue
            theta[a][k] = m.add_var(f"th_{a}_{q}_{h}", BINARY, lb=1.0 if k in dks else 0.0)
    _occupancy_and_fifo(m, L, theta)
    cand = {}
    for a in L.path_links:
        if not L.real(a):
            cand[a] = range(L.Q * L.Q)
        else:
            dks = {L.k(*v) for v in ded.get(a, ())}
            cand[a] = [k for k in theta[a] if k not in dks]
    f, pi, pireg = _flow_block(m, L, cand, omega)
    for (a, k), vs in _group_pi(pi).items():
        if not L.real(a):
            continue
        q, h = L.pairs[k]
        row = {v: 1.0 for v in vs}
        row[theta[a][k]] = -float(L.rh.size[a])
        m.add_constr(row, "<=", 0.0, f"cap_{a}_{q}_{h}")
    m.obj_constant = omega * bus_cost(s, rh, it)
    return DesignModel("milp-l", m, L, omega, theta, {}, {}, f, pi, pireg, fixed_bus=it)


def build_lp_l(s: Scenario, rh: BackgroundRhythm, it: BusItinerary,
               omega: float | None = None, prune_slow: bool = True) -> DesignModel:
    """Continuous lower level: fixed availability, no FIFO rows, splittable platoons.

    Besides the per-platoon capacity, every arrival and every departure slot
    of a link is capped at one platoon's worth of cars, which the occupancy
    rows imply in the integer model.
    """
    omega = s.omega if omega is None else omega
    validate_bus_itinerary(s, rh, it)
    _check_demand(s)
    L = _Layout(s, rh)
    m = MilpModel("lp-l")
    avail = available_platoons(s, rh, it, prune_slow=prune_slow)
    cand = {a: (sorted(avail[a]) if L.real(a) else range(L.Q * L.Q)) for a in L.path_links}
    f, pi, pireg = _flow_block(m, L, cand, omega)
    groups = _group_pi(pi)
    slot_in: dict = {}
    slot_out: dict = {}
    for (a, k), vs in groups.items():
        if not L.real(a):
            continue
        q, h = L.pairs[k]
        m.add_constr({v: 1.0 for v in vs}, "<=", float(L.rh.size[a]), f"cap_{a}_{q}_{h}")
        slot_in.setdefault((a, q), []).extend(vs)
        slot_out.setdefault((a, h), []).extend(vs)
    for (a, q), vs in sorted(slot_in.items()):
        m.add_constr({v: 1.0 for v in vs}, "<=", float(L.rh.size[a]), f"slotin_{a}_{q}")
    for (a, h), vs in sorted(slot_out.items()):
        m.add_constr({v: 1.0 for v in vs}, "<=", float(L.rh.size[a]), f"slotout_{a}_{h}")
    m.obj_constant = omega * bus_cost(s, rh, it)
    return DesignModel("lp-l", m, L, omega, {}, {}, {}, f, pi, pireg, fixed_bus=it,
                       available=avail)


# ----------------------------------------------------------------------
# extraction, validation and objective
# ----------------------------------------------------------------------
def extract_plan(dm: DesignModel, sol: MilpSolution, validate: bool = True) -> RchPlan:
    """Read a plan from a solved design model.

    Raises
    ------
    PlanError
        The solution is not optimal or breaks a plan invariant.
    """
    if sol.status not in ("optimal", "iteration-limit") or sol.x.size == 0:
        raise PlanError(f"cannot extract a plan from a {sol.status} solution")
    L, x = dm.layout, sol.x
    plan = RchPlan()
    if dm.fixed_bus is not None:
        plan.bus = BusItinerary(dict(dm.fixed_bus.vps))
    else:
        for (p, a), vs in dm.bus.items():
            k = max(vs, key=lambda k: x[vs[k]])
            plan.bus.vps[(p, a)] = L.pairs[k]
    plan.dedicated = {a: set(v) for a, v in plan.bus.dedicated().items()}
    for (w, r), v in dm.f.items():
        plan.path_flow[(w, r)] = max(0.0, float(x[v]))
    for (w, r, a, k), v in dm.pi.items():
        val = float(x[v])
        if val > 1e-9:
            q, h = L.pairs[k]
            plan.pi[(w, r, a, q, h)] = val
    for (w, r, a, q), v in dm.pireg.items():
        val = float(x[v])
        if val > 1e-9:
            plan.pi_reg[(w, r, a, q)] = val
    if dm.theta:
        for a, th in dm.theta.items():
            plan.realized[a] = {L.pairs[k] for k, v in th.items() if x[v] > 0.5}
    else:
        for (w, r, a, q, h) in plan.pi:
            if L.real(a):
                plan.realized.setdefault(a, set()).add((q, h))
        for a, vps in plan.dedicated.items():
            plan.realized.setdefault(a, set()).update(vps)
    if validate:
        validate_plan(L.s, L.rh, plan, fifo=bool(dm.theta))
    return plan


def shift_plan(plan: RchPlan, c: int, Q: int) -> RchPlan:
    """Relabel every slot ``q`` as ``q + c`` (mod Q); costs and feasibility are unchanged."""
    def sh(q):
        return (q - 1 + c) % Q + 1

    out = RchPlan()
    out.realized = {a: {(sh(q), sh(h)) for q, h in v} for a, v in plan.realized.items()}
    out.dedicated = {a: {(sh(q), sh(h)) for q, h in v} for a, v in plan.dedicated.items()}
    out.bus = BusItinerary({k: (sh(q), sh(h)) for k, (q, h) in plan.bus.vps.items()})
    out.path_flow = dict(plan.path_flow)
    out.pi = {(w, r, a, sh(q), sh(h)): v for (w, r, a, q, h), v in plan.pi.items()}
    out.pi_reg = {(w, r, a, sh(q)): v for (w, r, a, q), v in plan.pi_reg.items()}
    return out


def start_vector(dm: DesignModel, plan: RchPlan) -> np.ndarray:
    """MILP-O variable vector encoding ``plan``, usable as a solver start.

    The plan is first shifted so that it respects the symmetry pin of
    :func:`build_milp_o`.
    """
    L, s = dm.layout, dm.layout.s
    if s.bus_lines and plan.bus.vps:
        first = min(s.bus_lines, key=lambda b: b.id)
        key = (first.id, s.bus_links(first)[0].id)
        if key in plan.bus.vps:
            plan = shift_plan(plan, 1 - plan.bus.vps[key][0], L.Q)
    x = np.zeros(dm.model.num_vars)
    for a, th in dm.theta.items():
        for q, h in plan.realized.get(a, ()):
            x[th[L.k(q, h)]] = 1.0
    for a, dv in dm.ded.items():
        for q, h in plan.dedicated.get(a, ()):
            if L.k(q, h) in dv:
                x[dv[L.k(q, h)]] = 1.0
    for (p, a), vs in dm.bus.items():
        k = L.k(*plan.bus.vps[(p, a)])
        if k in vs:
            x[vs[k]] = 1.0
    for line in s.bus_lines:
        links = s.bus_links(line)
        for a, b in zip(links[:-1], links[1:]):
            if (line.id, a.head) in dm.phi:
                h = plan.bus.vps[(line.id, a.id)][1]
                q = plan.bus.vps[(line.id, b.id)][0]
                x[dm.phi[(line.id, a.head)]] = 1.0 if q <= h else 0.0
    for key, v in dm.f.items():
        x[v] = plan.path_flow.get(key, 0.0)
    for (w, r, a, k), v in dm.pi.items():
        x[v] = plan.pi.get((w, r, a) + L.pairs[k], 0.0)
    for key, v in dm.pireg.items():
        x[v] = plan.pi_reg.get(key, 0.0)
    return x


def validate_plan(s: Scenario, rh: BackgroundRhythm, plan: RchPlan, fifo: bool = True,
                  tol: float = 1e-6) -> None:
    """Re-check every plan invariant without reference to any solver model.

    Raises
    ------
    PlanError
        Naming the first violated invariant.
    """
    Q, T, H = s.Q, s.T, s.H
    for a, vps in plan.realized.items():
        qs = [v[0] for v in vps]
        hs = [v[1] for v in vps]
        if len(set(qs)) != len(qs) or len(set(hs)) != len(hs):
            raise PlanError(f"link {a}: two realized platoons share a slot")
        if fifo:
            vv = sorted(vps)
            for x in range(len(vv)):
                for y in range(x + 1, len(vv)):
                    if fifo_verdict(rh.alpha[a], vv[x], vv[y], Q) == FIFO_VIOLATION:
                        raise PlanError(f"link {a}: platoons {vv[x]} and {vv[y]} cross")
    for a, vps in plan.dedicated.items():
        if not set(vps) <= set(plan.realized.get(a, set())):
            raise PlanError(f"link {a}: dedicated platoon not realized")
    validate_bus_itinerary(s, rh, plan.bus)
    for d_idx, d in enumerate(s.demands):
        tot = sum(v for (w, r), v in plan.path_flow.items() if w == d_idx)
        if abs(tot - d.rate / T) > tol * max(1.0, d.rate):
            raise PlanError(f"demand {d.key}: path flows {tot} != {d.rate / T}")
    load: dict = {}
    for (w, r, a, q, h), v in plan.pi.items():
        if v < -tol:
            raise PlanError("negative volume")
        if s.link(a).virtual:
            continue
        if (q, h) not in plan.realized.get(a, set()) or (q, h) in plan.dedicated.get(a, set()):
            raise PlanError(f"link {a}: volume on unavailable platoon {(q, h)}")
        load[(a, q, h)] = load.get((a, q, h), 0.0) + v
    for (a, q, h), v in load.items():
        if v > rh.size[a] + tol:
            raise PlanError(f"link {a}: platoon {(q, h)} over capacity ({v})")
    reg: dict = {}
    for (w, r, a, q), v in plan.pi_reg.items():
        reg[(a, q)] = reg.get((a, q), 0.0) + v
    for (a, q), v in reg.items():
        if v > rh.size[a] * (s.link(a).lanes - 1) + tol:
            raise PlanError(f"link {a}: regular lane over capacity at {q}")
    # conservation along every path
    for (w, r), fv in plan.path_flow.items():
        path = s.demands[w].paths[r]
        lam = {a: np.zeros(Q + 1) for a in path}
        mu = {a: np.zeros(Q + 1) for a in path}
        for (w2, r2, a, q, h), v in plan.pi.items():
            if (w2, r2) == (w, r):
                lam[a][q] += v
                mu[a][h] += v
        for (w2, r2, a, q), v in plan.pi_reg.items():
            if (w2, r2) == (w, r):
                lam[a][q] += v
                mu[a][(q - 1 + rh.alpha[a]) % Q + 1] += v
        if np.any(np.abs(lam[path[0]][1:] - T * fv) > tol):
            raise PlanError(f"path {(w, r)}: entrance volumes differ from T*f")
        if abs(mu[path[-1]][1:].sum() - H * fv) > tol * max(1.0, H * fv):
            raise PlanError(f"path {(w, r)}: exit volume differs from H*f")
        for a, b in zip(path[:-1], path[1:]):
            if np.any(np.abs(mu[a][1:] - lam[b][1:]) > tol):
                raise PlanError(f"path {(w, r)}: conservation broken between links {a} and {b}")


def free_flow_costs(s: Scenario) -> tuple[float, float]:
    """``(O_a^m, O_b^m)``: fastest-path car cost and minimum bus cost."""
    oa = 0.0
    for d in s.demands:
        if d.rate > 0:
            oa += d.rate * s.Q * min(s.path_time(p) for p in d.paths)
    ob = 0.0
    for line in s.bus_lines:
        t = sum(a.bus_min_time for a in s.bus_links(line))
        t += line.min_dwell * len(line.stations)
        ob += line.passengers * t
    return oa, ob


def car_cost(s: Scenario, rh: BackgroundRhythm, plan: RchPlan) -> float:
    total = 0.0
    for (w, r, a, q, h), v in plan.pi.items():
        total += v * realized_travel_time(rh, a, q, h)[0]
    for (w, r, a, q), v in plan.pi_reg.items():
        total += v * rh.travel_time(a)
    return total


def evaluate_objective(s: Scenario, rh: BackgroundRhythm, plan: RchPlan,
                       omega: float | None = None) -> ObjectiveBreakdown:
    """Cost breakdown of a plan, with free-flow baselines."""
    omega = s.omega if omega is None else omega
    oa = car_cost(s, rh, plan)
    ob = bus_cost(s, rh, plan.bus) if plan.bus.vps else 0.0
    oa_m, ob_m = free_flow_costs(s)
    if not plan.bus.vps and not plan.pi and not plan.pi_reg:
        oa_m = ob_m = 0.0
    return ObjectiveBreakdown(oa, ob, (1 - omega) * oa + omega * ob, oa + ob, oa_m, ob_m, omega)


def solve_milp_o(s: Scenario, rh: BackgroundRhythm, omega: float | None = None,
                 backend: str = "highs", time_limit: float | None = None,
                 start: RchPlan | None = None):
    """Build, solve and extract MILP-O. Returns ``(plan, breakdown, solution)``.

    ``start`` is an optional feasible plan (for instance a bilevel result)
    passed to HiGHS as the initial incumbent.
    """
    dm = build_milp_o(s, rh, omega)
    x0 = start_vector(dm, start) if start is not None and backend == "highs" else None
    sol = dm.solve(backend=backend, time_limit=time_limit, x0=x0)
    plan = extract_plan(dm, sol)
    return plan, evaluate_objective(s, rh, plan, dm.omega), sol


# ----------------------------------------------------------------------
# greedy completion for online operation
# ----------------------------------------------------------------------
def complete_realization(s: Scenario, rh: BackgroundRhythm, plan: RchPlan) -> RchPlan:
    """Fill every link's free slots with FIFO-compatible platoons.

    Keeps the plan's realized and dedicated platoons, then adds every
    background platoon whose slots are still free and crosses nothing, and
    finally gives each remaining free arrival slot the earliest free
    departure slot that crosses no platoon already on the link. Used to give
    online booking a full platoon table at demands other than the design
    demand.
    """
    Q = s.Q
    out = RchPlan({a: set(v) for a, v in plan.realized.items()},
                  {a: set(v) for a, v in plan.dedicated.items()},
                  BusItinerary(dict(plan.bus.vps)), dict(plan.path_flow),
                  dict(plan.pi), dict(plan.pi_reg))
    for link in s.links:
        if link.virtual:
            continue
        a = link.id
        vps = out.realized.setdefault(a, set())
        alpha = rh.alpha[a]

        def fits(q, h):
            return (all(v[0] != q and v[1] != h for v in vps)
                    and all(fifo_verdict(alpha, (q, h), v, Q) != FIFO_VIOLATION for v in vps))

        for q in range(1, Q + 1):
            h = (q - 1 + alpha) % Q + 1
            if fits(q, h):
                vps.add((q, h))
        for q in range(1, Q + 1):
            if any(v[0] == q for v in vps):
                continue
            for delay in range(1, Q):
                h = (q - 1 + alpha + delay) % Q + 1
                if fits(q, h):
                    vps.add((q, h))
                    break
    return out


# ----------------------------------------------------------------------
# plan file
# ----------------------------------------------------------------------
def plan_to_dict(plan: RchPlan, breakdown: ObjectiveBreakdown | None = None) -> dict:
    data = {
        "format": PLAN_FORMAT, "version": PLAN_VERSION,
        "realized": {str(a): sorted([list(v) for v in vps]) for a, vps in sorted(plan.realized.items())},
        "dedicated": {str(a): sorted([list(v) for v in vps])
                      for a, vps in sorted(plan.dedicated.items())},
        "bus": [{"line": p, "link": a, "q": int(v[0]), "q_hat": int(v[1])}
                for (p, a), v in sorted(plan.bus.vps.items())],
        "path_flow": [{"demand": w, "path": r, "f": v} for (w, r), v in sorted(plan.path_flow.items())],
        "pi": [[w, r, a, q, h, v] for (w, r, a, q, h), v in sorted(plan.pi.items())],
        "pi_reg": [[w, r, a, q, v] for (w, r, a, q), v in sorted(plan.pi_reg.items())],
    }
    if breakdown is not None:
        data["objective"] = {"O_a": breakdown.O_a, "O_b": breakdown.O_b, "O": breakdown.O,
                             "omega": breakdown.omega, **breakdown.table_row()}
    return data


def plan_from_dict(data: dict) -> RchPlan:
    if data.get("format") != PLAN_FORMAT:
        raise PlanError("not an rch-plan document")
    plan = RchPlan()
    plan.realized = {int(a): {tuple(v) for v in vps} for a, vps in data["realized"].items()}
    plan.dedicated = {int(a): {tuple(v) for v in vps} for a, vps in data["dedicated"].items()}
    plan.bus = BusItinerary({(int(e["line"]), int(e["link"])): (int(e["q"]), int(e["q_hat"]))
                             for e in data["bus"]})
    plan.path_flow = {(int(e["demand"]), int(e["path"])): float(e["f"]) for e in data["path_flow"]}
    plan.pi = {(int(w), int(r), int(a), int(q), int(h)): float(v)
               for w, r, a, q, h, v in data["pi"]}
    plan.pi_reg = {(int(w), int(r), int(a), int(q)): float(v) for w, r, a, q, v in data["pi_reg"]}
    return plan


def save_plan(plan: RchPlan, path, breakdown: ObjectiveBreakdown | None = None) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan, breakdown), indent=2, sort_keys=True) + "\n")


def load_plan(path) -> RchPlan:
    return plan_from_dict(json.loads(Path(path).read_text()))
