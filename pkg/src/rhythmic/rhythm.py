"""Background rhythm design and the platoon arithmetic built on it.

A background rhythm fixes, for every node ``i``, a relative arrival time
``tau[i]`` in ``[0, T)`` and, for every link, a whole number of RC cycles
``alpha`` so that the background travel time is
``t_a = tau[j] - tau[i] + alpha * T``. Platoons are numbered ``1..Q`` within
one RC-H cycle ``H = Q * T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .network import Scenario, ScenarioError
from .solver import BINARY, INTEGER, MilpModel, solve

FIFO_VIOLATION, FIFO_OK = 1, 2


class RhythmInfeasible(RuntimeError):
    """The conflict set cannot be honoured with the given cycle length."""


@dataclass(frozen=True)
class BackgroundRhythm:
    """Background pace of every node and link.

    Attributes
    ----------
    T : float
        RC cycle in seconds.
    Q : int
        Platoons per RC-H cycle.
    tau : dict
        Node id to relative arrival time in ``[0, T)``.
    alpha : dict
        Link id to background cycle count for cars.
    alpha_bus : dict
        Link id to cycle count of the fastest bus-feasible pace.
    size : dict
        Link id to platoon size ``s_a``.
    objective : float
        Weighted delay of the design model (0 for hand-built rhythms).
    """

    T: float
    Q: int
    tau: Mapping[int, float]
    alpha: Mapping[int, int]
    alpha_bus: Mapping[int, int] = field(default_factory=dict)
    size: Mapping[int, int] = field(default_factory=dict)
    link_ends: Mapping[int, tuple[int, int]] = field(default_factory=dict)
    objective: float = 0.0

    @property
    def H(self) -> float:
        return self.Q * self.T

    def offset(self, link: int) -> float:
        i, j = self.link_ends[link]
        return self.tau[j] - self.tau[i]

    def travel_time(self, link: int) -> float:
        return self.offset(link) + self.alpha[link] * self.T

    def bus_time(self, link: int) -> float:
        return self.offset(link) + self.alpha_bus[link] * self.T

    def background_pairs(self, link: int) -> list[tuple[int, int]]:
        """(q, q_hat) pairs of the background platoons on ``link``."""
        a = self.alpha[link]
        return [(q, (q - 1 + a) % self.Q + 1) for q in range(1, self.Q + 1)]

    def is_background(self, link: int, q: int, q_hat: int) -> bool:
        return (q - 1 + self.alpha[link]) % self.Q + 1 == q_hat


def rhythm_from_times(s: Scenario, tau: Mapping[int, float] | None = None) -> BackgroundRhythm:
    """Rhythm with the given offsets and the smallest feasible cycle counts.

    With ``tau`` omitted every offset is zero, which is exact whenever the
    minimum link times are multiples of ``T``.
    """
    tau = {n.id: 0.0 for n in s.nodes} if tau is None else dict(tau)
    alpha, alpha_bus, ends = {}, {}, {}
    for a in s.links:
        d = tau[a.head] - tau[a.tail]
        alpha[a.id] = max(0, math.ceil((a.car_min_time - d) / s.T - 1e-9))
        alpha_bus[a.id] = max(0, math.ceil((a.bus_min_time - d) / s.T - 1e-9))
        ends[a.id] = (a.tail, a.head)
    return BackgroundRhythm(s.T, s.Q, tau, alpha, alpha_bus,
                            {a.id: s.size_of(a) for a in s.links}, ends, 0.0)


def bus_passengers(s: Scenario) -> dict[int, float]:
    """Link id to the summed passenger weight of buses using it."""
    out: dict[int, float] = {}
    for line in s.bus_lines:
        for a in s.bus_links(line):
            out[a.id] = out.get(a.id, 0.0) + line.passengers
    return out


def design_background_rhythm(s: Scenario, conflicts=None, backend: str = "highs") -> BackgroundRhythm:
    """Solve the background rhythm MILP.

    Minimises ``sum(Q * s_a * r_a + sum_p gamma_p * r_p)`` over node offsets
    ``tau``, cycle counts and conflict binaries, where ``r`` are the delays of
    the background (car) and bus paces over the minimum link times. Each
    conflict pair is forced half a cycle apart.

    Parameters
    ----------
    s : Scenario
        Normally the expanded network.
    conflicts : list of (int, int), optional
        Conflict node pairs; derived with :func:`rhythmic.network.conflict_pairs`
        when omitted.
    backend : str
        Solver backend.

    Raises
    ------
    RhythmInfeasible
        No offsets satisfy the conflict set.
    """
    from .network import conflict_pairs

    if conflicts is None:
        conflicts = conflict_pairs(s)
    T, Q, eps = s.T, s.Q, s.epsilon
    m = MilpModel("background-rhythm")
    tau = {n.id: m.add_var(f"tau_{n.id}", lb=0.0, ub=T - eps) for n in s.nodes}
    weights = bus_passengers(s)
    alpha, alpha_bus = {}, {}
    for a in s.links:
        d = tau[a.head], tau[a.tail]
        hi_a = math.ceil(a.car_min_time / T) + 2
        alpha[a.id] = m.add_var(f"alpha_{a.id}", INTEGER, 0, hi_a)
        r = m.add_var(f"ra_{a.id}", lb=0.0, ub=T - eps, obj=Q * s.size_of(a))
        m.add_constr({d[0]: 1, d[1]: -1, alpha[a.id]: T, r: -1}, "==", a.car_min_time,
                     f"ra_def_{a.id}")
        if a.id in weights:
            hi_p = math.ceil(a.bus_min_time / T) + 2
            alpha_bus[a.id] = m.add_var(f"alphap_{a.id}", INTEGER, 0, hi_p)
            rp = m.add_var(f"rp_{a.id}", lb=0.0, ub=T - eps, obj=weights[a.id])
            m.add_constr({d[0]: 1, d[1]: -1, alpha_bus[a.id]: T, rp: -1}, "==",
                         a.bus_min_time, f"rp_def_{a.id}")
    for i1, i2 in conflicts:
        th = m.add_var(f"theta_{i1}_{i2}", BINARY)
        m.add_constr({tau[i1]: 1, tau[i2]: -1, th: T}, "==", T / 2, f"conflict_{i1}_{i2}")
    sol = solve(m, backend=backend)
    if sol.status == "infeasible":
        raise RhythmInfeasible("conflict set cannot be satisfied with cycle T")
    if not sol.ok:
        raise RhythmInfeasible(f"rhythm design failed: {sol.status}")
    tau_val = {n: _snap(sol.x[v], T) for n, v in tau.items()}
    rh = rhythm_from_times(s, tau_val)
    return BackgroundRhythm(rh.T, rh.Q, rh.tau, rh.alpha, rh.alpha_bus, rh.size, rh.link_ends,
                            sol.objective)


def _snap(v: float, T: float) -> float:
    # solver noise around grid values would otherwise leak into alpha
    r = round(v * 1e6) / 1e6
    return 0.0 if abs(r - T) < 1e-6 else r


def link_delays(s: Scenario, rh: BackgroundRhythm) -> dict[int, float]:
    """Background delay ``t_a - t_a_min`` per link."""
    return {a.id: rh.travel_time(a.id) - a.car_min_time for a in s.links}


def conflict_offsets(rh: BackgroundRhythm, conflicts) -> list[float]:
    """``(tau[i1] - tau[i2]) mod T`` for every conflict pair."""
    return [(rh.tau[i1] - rh.tau[i2]) % rh.T for i1, i2 in conflicts]


# ----------------------------------------------------------------------
# platoon arithmetic
# ----------------------------------------------------------------------
def wrap_count(alpha: int, q: int, q_hat: int, Q: int) -> int:
    """RC-H cycles ``beta`` a realized platoon ``q -> q_hat`` spans."""
    return max(0, -((q_hat - q - alpha) // Q))


def realized_travel_time(rh: BackgroundRhythm, link: int, q: int, q_hat: int) -> tuple[float, int]:
    """Travel time of the realized platoon ``q -> q_hat`` on ``link``.

    Returns
    -------
    (float, int)
        ``t = tau_j - tau_i + (q_hat - q) * T + beta * H`` and the smallest
        ``beta >= 0`` with ``t >= t_a``.
    """
    if not (1 <= q <= rh.Q and 1 <= q_hat <= rh.Q):
        raise ValueError("platoon numbers must lie in 1..Q")
    beta = wrap_count(rh.alpha[link], q, q_hat, rh.Q)
    return rh.offset(link) + (q_hat - q) * rh.T + beta * rh.H, beta


def fifo_verdict(alpha: int, m: tuple[int, int], n: tuple[int, int], Q: int) -> int:
    """FIFO compatibility of two realized platoons on one link.

    Platoons are ordered so that ``q_m < q_n``. A platoon whose departure is
    in the same RC-H cycle as its arrival has ``q_hat >= q + alpha``. With
    at most one wrap per platoon: when ``q_hat_m > q_hat_n`` the pair crosses
    iff both platoons share that status; when ``q_hat_m < q_hat_n`` it
    crosses iff exactly one has it. Longer links can wrap more than once, so
    the comparison is done on the wrap counts themselves, which reduces to
    the status rule above when no platoon wraps twice.

    Returns
    -------
    int
        1 for a crossing (violation), 2 otherwise. Pairs sharing an arrival
        or departure platoon return 2; occupancy rules exclude them.
    """
    (qm, hm), (qn, hn) = sorted((tuple(m), tuple(n)))
    if qm == qn or hm == hn:
        return FIFO_OK
    # exit gap in units of T; entry gap lies strictly in (-Q, 0)
    u = (hm - hn) + (wrap_count(alpha, qm, hm, Q) - wrap_count(alpha, qn, hn, Q)) * Q
    return FIFO_VIOLATION if (u > 0 or u < -Q) else FIFO_OK


def fifo_conflict(rh: BackgroundRhythm, link: int, m: tuple[int, int], n: tuple[int, int]) -> int:
    return fifo_verdict(rh.alpha[link], m, n, rh.Q)


def realized_pairs(Q: int) -> list[tuple[int, int]]:
    return [(q, h) for q in range(1, Q + 1) for h in range(1, Q + 1)]


# ----------------------------------------------------------------------
# capacities
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class AdmissibleTraffic:
    """Vehicles per RC-H cycle the platoon structure can carry.

    ``per_link`` maps link id to capacity; ``per_od`` maps (origin,
    destination) to the bottleneck capacity of the best candidate path.
    """

    per_link: dict
    per_od: dict


def lane_capacity(Q: int, size: int, lanes: int, has_bus: bool) -> int:
    """``(lanes*Q - 2) * s_a`` with a dwelling bus on the mixed lane, else ``lanes*Q*s_a``."""
    return (lanes * Q - (2 if has_bus else 0)) * size


def max_admissible_traffic(s: Scenario, rh: BackgroundRhythm | None = None) -> AdmissibleTraffic:
    """Per-link and per-O-D admissible car traffic per RC-H cycle.

    A mixed lane that carries buses loses two background platoons per RC-H
    cycle (the dedicated platoons around a dwell). Virtual entrance links
    are waiting zones and are ignored in path bottlenecks.
    """
    Q = s.Q if rh is None else rh.Q
    bus_links = set(bus_passengers(s))
    per_link = {a.id: lane_capacity(Q, s.size_of(a), a.lanes, a.id in bus_links)
                for a in s.links}
    per_od = {}
    for d in s.demands:
        best = 0
        for path in d.paths:
            caps = [per_link[a] for a in path if not s.link(a).virtual]
            if caps:
                best = max(best, min(caps))
        if not d.paths:
            raise ScenarioError(f"demand {d.key} has no candidate paths")
        per_od[d.key] = best
    return AdmissibleTraffic(per_link, per_od)


def rhythm_to_dict(s: Scenario, rh: BackgroundRhythm) -> dict:
    return {
        "T": rh.T, "Q": rh.Q, "objective": rh.objective,
        "tau": {str(k): v for k, v in sorted(rh.tau.items())},
        "links": [{"id": a.id, "alpha": rh.alpha[a.id], "t_a": rh.travel_time(a.id),
                   "alpha_bus": rh.alpha_bus.get(a.id), "s_a": rh.size[a.id]}
                  for a in sorted(s.links, key=lambda a: a.id)],
    }


def rhythm_from_dict(s: Scenario, data: dict) -> BackgroundRhythm:
    tau = {int(k): float(v) for k, v in data["tau"].items()}
    alpha = {int(e["id"]): int(e["alpha"]) for e in data["links"]}
    alpha_bus = {int(e["id"]): int(e["alpha_bus"]) for e in data["links"]
                 if e.get("alpha_bus") is not None}
    size = {int(e["id"]): int(e["s_a"]) for e in data["links"]}
    ends = {a.id: (a.tail, a.head) for a in s.links}
    return BackgroundRhythm(float(data["T"]), int(data["Q"]), tau, alpha, alpha_bus, size, ends,
                            float(data.get("objective", 0.0)))
