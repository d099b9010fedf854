"""Slot-kinematic simulation of RC-H against fixed-time signal control.

Vehicles move at free-flow pace between nodes. Under RC-H a car books a
whole platoon chain when it appears at its origin and waits there until the
chain starts; under signal control vehicles queue vertically at stop lines
and discharge at a saturation headway during green.

Both schemes run on the expanded network. A signal controls every approach
node that appears in a conflict pair; each pair alternates its two phases.
"""
from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import RchPlan, complete_realization
from .network import Scenario, conflict_pairs, iter_path_nodes
from .rhythm import BackgroundRhythm, max_admissible_traffic

SATURATION_HEADWAY = 1.0  # s between discharges per lane
JAM_SPACING = 7.5  # m of lane per stored vehicle
CAR_SPEED = 15.0  # m/s, converts free-flow time to storage length


REPORT_FIELDS = ["control", "demand_level", "mean_car_time", "mean_bus_time", "throughput",
                 "completed", "incomplete", "entered"]


class SimulationError(RuntimeError):
    """An internal invariant (collision, FIFO, conservation) was broken."""


@dataclass(frozen=True)
class ControlScheme:
    """``rch`` with a plan and rhythm, or ``tsc`` with a two-phase fixed plan."""

    kind: str
    plan: RchPlan | None = None
    rhythm: BackgroundRhythm | None = None
    phase_length: float = 15.0
    clearance: float = 2.0
    dbl: bool = False

    @classmethod
    def rch(cls, plan: RchPlan, rhythm: BackgroundRhythm) -> "ControlScheme":
        return cls("rch", plan, rhythm)

    @classmethod
    def tsc(cls, phase_length: float = 15.0, clearance: float = 2.0,
            dbl: bool = False) -> "ControlScheme":
        if phase_length <= 0 or clearance < 0:
            raise ValueError("phase_length must be positive and clearance non-negative")
        return cls("tsc", phase_length=phase_length, clearance=clearance, dbl=dbl)

    @property
    def cycle(self) -> float:
        return 2.0 * (self.phase_length + self.clearance)

    @property
    def name(self) -> str:
        if self.kind == "rch":
            return "rch"
        return f"tsc-{self.phase_length:g}s-{'dbl' if self.dbl else 'no-dbl'}"


@dataclass
class VehicleRecord:
    vid: int
    kind: str  # "car" or "bus"
    group: int  # O-D index for cars, line id for buses
    path: tuple[int, ...]
    appear: float
    node_times: list[float] = field(default_factory=list)
    lanes: list[int] = field(default_factory=list)
    exit: float | None = None

    @property
    def travel_time(self) -> float:
        return math.inf if self.exit is None else self.exit - self.appear


@dataclass
class SimReport:
    """Aggregated metrics of one control scheme at one demand level."""

    control: str
    demand_level: float
    duration: float
    repetitions: int
    mean_car_time: float
    mean_bus_time: float
    throughput: float  # completed vehicles per hour, averaged over repetitions
    completed: int
    incomplete: int
    entered: int
    trajectories: list[VehicleRecord] = field(default_factory=list)

    def row(self) -> dict:
        return {"control": self.control, "demand_level": self.demand_level,
                "mean_car_time": self.mean_car_time, "mean_bus_time": self.mean_bus_time,
                "throughput": self.throughput, "completed": self.completed,
                "incomplete": self.incomplete, "entered": self.entered}


# ----------------------------------------------------------------------
# arrivals
# ----------------------------------------------------------------------
def poisson_arrivals(rate: float, duration: float, seed) -> np.ndarray:
    """Arrival times of a Poisson stream on ``[0, duration)``.

    A unit-rate stream is drawn from the seeded generator and compressed by
    ``rate``, so one seed yields nested, time-scaled streams across rates.
    """
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if rate == 0 or duration <= 0:
        return np.zeros(0)
    rng = np.random.default_rng(seed)
    horizon = rate * duration
    out = []
    t = 0.0
    while True:
        gaps = rng.exponential(1.0, size=max(16, int(horizon - t) + 16))
        times = t + np.cumsum(gaps)
        out.append(times[times < horizon])
        if times[-1] >= horizon:
            break
        t = times[-1]
    return np.concatenate(out) / rate


def demand_rates(s: Scenario, level: float, capacity: dict | None = None) -> list[float]:
    """Vehicles per second per O-D at ``level`` times the admissible bound."""
    if capacity is None:
        capacity = max_admissible_traffic(s).per_od
    return [level * capacity[d.key] / s.H for d in s.demands]


# ----------------------------------------------------------------------
# RC-H online booking
# ----------------------------------------------------------------------
class _RchState:
    def __init__(self, s: Scenario, control: ControlScheme):
        if control.plan is None or control.rhythm is None:
            raise ValueError("rch control needs a plan and a rhythm")
        self.s, self.rh = s, control.rhythm
        plan = complete_realization(s, self.rh, control.plan)
        Q = s.Q
        self.mixed: dict[int, dict[int, int]] = {}  # link -> q -> extra delay in slots
        for a, vps in plan.realized.items():
            ded = plan.dedicated.get(a, set())
            alpha = self.rh.alpha[a]
            self.mixed[a] = {q: (h - q - alpha) % Q for q, h in vps if (q, h) not in ded}
        self.plan = plan
        self.booked: dict[tuple[int, int, int], int] = {}  # (link, lane, slot) -> units
        self.first_free: dict[tuple[int, int], int] = {}

    def slot_time(self, node: int, k: int) -> float:
        return self.rh.tau[node] + k * self.s.T

    def first_slot(self, node: int, t: float) -> int:
        return math.ceil((t - self.rh.tau[node]) / self.s.T - 1e-9)

    def _options(self, a: int, k: int):
        """Lanes a car can take entering ``a`` at absolute slot ``k``: (exit slot, lane)."""
        s, link = self.s, self.s.link(a)
        alpha = self.rh.alpha[a]
        size = self.rh.size[a]
        opts = []
        if link.virtual:
            return [(k, 0)]
        q = k % s.Q + 1
        if q in self.mixed.get(a, {}) and self.booked.get((a, 0, k), 0) < size:
            opts.append((k + alpha + self.mixed[a][q], 0))
        if link.lanes > 1 and self.booked.get((a, 1, k), 0) < size * (link.lanes - 1):
            opts.append((k + alpha, 1))
        opts.sort()
        return opts

    def _chain(self, path: tuple[int, ...], k0: int):
        failed = set()

        def dfs(i, k):
            if i == len(path):
                return []
            if (i, k) in failed:
                return None
            for k_out, lane in self._options(path[i], k):
                rest = dfs(i + 1, k_out)
                if rest is not None:
                    return [(path[i], lane, k, k_out)] + rest
            failed.add((i, k))
            return None

        return dfs(0, k0)

    def book_car(self, w: int, t: float, horizon: int):
        """Earliest complete chain over all candidate paths; ``None`` past ``horizon`` slots."""
        d = self.s.demands[w]
        best = None
        for r, path in enumerate(d.paths):
            first_real = next((a for a in path if not self.s.link(a).virtual), path[0])
            node = self.s.link(first_real).tail
            k0 = max(self.first_slot(node, t), self.first_free.get((w, r), -10**9))
            real = tuple(a for a in path if not self.s.link(a).virtual)
            for k in range(k0, k0 + horizon):
                chain = self._chain(real, k)
                if chain is not None:
                    break
                # capacity only shrinks, so later cars on this path skip slot k too
                self.first_free[(w, r)] = k + 1
            else:
                continue
            end = self.slot_time(self.s.link(real[-1]).head, chain[-1][3])
            if best is None or end < best[0]:
                best = (end, r, chain)
        if best is None:
            return None
        for a, lane, k, _ in best[2]:
            key = (a, lane, k)
            self.booked[key] = self.booked.get(key, 0) + 1
            cap = self.rh.size[a] * (1 if lane == 0 else self.s.link(a).lanes - 1)
            if self.booked[key] > cap:
                raise SimulationError(f"platoon over-booked on link {a} slot {k}")
        return best

    def bus_chain(self, line, n: int):
        """Dedicated chain of the bus of ``line`` dispatched in RC-H cycle ``n``."""
        s, Q = self.s, self.s.Q
        links = s.bus_links(line)
        q0 = self.plan.bus.vps[(line.id, links[0].id)][0]
        k = n * Q + (q0 - 1)
        chain = []
        for a, nxt in zip(links, links[1:] + [None]):
            q, h = self.plan.bus.vps[(line.id, a.id)]
            k_out = k + self.rh.alpha[a.id] + (h - q - self.rh.alpha[a.id]) % Q
            chain.append((a.id, k, k_out))
            if nxt is not None:
                q_next = self.plan.bus.vps[(line.id, nxt.id)][0]
                k = k_out + (q_next - h) % Q
        for a, k, _ in chain:
            key = (a, 2, k)  # dedicated capacity is tracked apart from cars
            self.booked[key] = self.booked.get(key, 0) + line.size
            if self.booked[key] > self.rh.size[a]:
                raise SimulationError(f"dedicated platoon over-booked on link {a} slot {k}")
        return chain


def _run_rch(s: Scenario, control: ControlScheme, rates, duration, seed) -> list[VehicleRecord]:
    st = _RchState(s, control)
    records: list[VehicleRecord] = []
    arrivals = []
    for w, rate in enumerate(rates):
        for t in poisson_arrivals(rate, duration, [seed, w]):
            arrivals.append((float(t), w))
    arrivals.sort()
    horizon = max(8 * s.Q, int(math.ceil(2 * duration / s.T)) + 1)
    vid = 0
    for t, w in arrivals:
        rec = VehicleRecord(vid, "car", w, (), t)
        vid += 1
        got = st.book_car(w, t, horizon)
        if got is not None:
            end, r, chain = got
            rec.path = tuple(s.demands[w].paths[r])
            start = st.slot_time(s.link(chain[0][0]).tail, chain[0][2])
            legs = iter(chain)
            rec.node_times = [t]
            for a in rec.path:
                if s.link(a).virtual:
                    rec.node_times.append(start)
                    rec.lanes.append(0)
                else:
                    _, lane, _, k_out = next(legs)
                    rec.node_times.append(st.slot_time(s.link(a).head, k_out))
                    rec.lanes.append(lane)
            rec.exit = end
        records.append(rec)
    n_cycles = int(math.ceil(duration / s.H))
    for line in s.bus_lines:
        for n in range(n_cycles):
            chain = st.bus_chain(line, n)
            t0 = st.slot_time(s.link(chain[0][0]).tail, chain[0][1])
            if t0 >= duration:
                continue
            rec = VehicleRecord(vid, "bus", line.id, tuple(a for a, _, _ in chain), t0)
            vid += 1
            rec.node_times = [t0] + [st.slot_time(s.link(a).head, k) for a, _, k in chain]
            rec.lanes = [0] * len(chain)  # dedicated platoons run in the mixed lane
            rec.exit = rec.node_times[-1]
            records.append(rec)
    return records


# ----------------------------------------------------------------------
# fixed-time signal control
# ----------------------------------------------------------------------
class _TscState:
    def __init__(self, s: Scenario, control: ControlScheme):
        self.s, self.c = s, control
        self.phase: dict[int, int] = {}
        for u, v in conflict_pairs(s):
            self.phase.setdefault(u, 0)
            self.phase.setdefault(v, 1 - self.phase[u])
        self.bus_links = {a.id for b in s.bus_lines for a in s.bus_links(b)}
        self.count: dict[tuple[int, int], int] = {}
        self.queue: dict[tuple[int, int], deque] = {}
        self.last: dict[tuple[int, int], float] = {}
        self.waiting: dict[tuple[int, int], list] = {}

    def storage(self, a: int) -> int:
        link = self.s.link(a)
        if link.virtual:
            return 10**9
        return max(1, int(link.car_min_time * CAR_SPEED / JAM_SPACING))

    def lanes_for(self, a: int, kind: str) -> list[int]:
        link = self.s.link(a)
        if link.virtual:
            return [0]
        if self.c.dbl and a in self.bus_links and link.lanes > 1:
            return [0] if kind == "bus" else list(range(1, link.lanes))
        return list(range(link.lanes))

    def next_green(self, node: int, t: float) -> float:
        """Earliest time >= t at which approach node ``node`` shows green."""
        if node not in self.phase:
            return t
        C, g, c = self.c.cycle, self.c.phase_length, self.c.clearance
        start = self.phase[node] * (g + c)
        x = (t - start) % C
        if x < g - 1e-9:
            return t
        return t + (C - x)


def _run_tsc(s: Scenario, control: ControlScheme, rates, duration, seed) -> list[VehicleRecord]:
    st = _TscState(s, control)
    events: list = []
    seq = 0

    def push(t, kind, data):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, data))
        seq += 1

    pending: dict = {}  # queue key -> time of its earliest scheduled retry

    def retry(key, t):
        if key in pending and pending[key] <= t + 1e-12:
            return
        pending[key] = t
        push(t, "try", key)

    records: list[VehicleRecord] = []
    vid = 0
    for w, rate in enumerate(rates):
        d = s.demands[w]
        if not d.paths:
            continue
        path = tuple(min(d.paths, key=s.path_time))
        for t in poisson_arrivals(rate, duration, [seed, w]):
            rec = VehicleRecord(vid, "car", w, path, float(t))
            vid += 1
            records.append(rec)
            push(float(t), "appear", rec)
    for line in s.bus_lines:
        path = tuple(a.id for a in s.bus_links(line))
        n = 0
        while n * s.H < duration:
            rec = VehicleRecord(vid, "bus", line.id, path, n * s.H)
            vid += 1
            records.append(rec)
            push(n * s.H, "appear", rec)
            n += 1
    stations = {b.id: (set(b.stations), b.min_dwell) for b in s.bus_lines}
    pos: dict[int, int] = {}  # vid -> index of current link in its path
    lane_of: dict[int, int] = {}

    def link_time(rec, a):
        link = s.link(a)
        return link.bus_min_time if rec.kind == "bus" else link.car_min_time

    last_reach: dict[tuple[int, int], float] = {}

    def enter(rec, i, t):
        a = rec.path[i]
        lanes = st.lanes_for(a, rec.kind)
        lane = min(lanes, key=lambda ln: (st.count.get((a, ln), 0), ln))
        st.count[(a, lane)] = st.count.get((a, lane), 0) + 1
        pos[rec.vid] = i
        lane_of[rec.vid] = lane
        rec.node_times.append(t)
        rec.lanes.append(lane)
        # no overtaking within a lane
        reach = max(t + link_time(rec, a), last_reach.get((a, lane), -math.inf))
        last_reach[(a, lane)] = reach
        push(reach, "reach", rec)

    def has_space(rec, i):
        a = rec.path[i]
        cap = st.storage(a)
        return any(st.count.get((a, ln), 0) < cap for ln in st.lanes_for(a, rec.kind))

    def try_discharge(key, t):
        a, lane = key
        q = st.queue.get(key)
        if not q:
            return
        rec = q[0]
        ready = max(t, st.last.get(key, -math.inf) + SATURATION_HEADWAY)
        if ready > t + 1e-9:
            retry(key, ready)
            return
        head = s.link(a).head
        g = st.next_green(head, t)
        if g > t + 1e-9:
            retry(key, g)
            return
        i = pos[rec.vid]
        last_link = i + 1 >= len(rec.path)
        if not last_link and not has_space(rec, i + 1):
            st.waiting.setdefault(rec.path[i + 1], []).append(key)
            return
        q.popleft()
        st.last[key] = t
        st.count[key] -= 1
        for k2 in st.waiting.pop(a, []):
            retry(k2, t)
        if last_link:
            rec.node_times.append(t)
            rec.exit = t
        elif rec.kind == "bus" and s.link(a).head in stations[rec.group][0]:
            # the bus pulls off the lane to dwell, then rejoins the next link
            push(t + stations[rec.group][1], "resume", rec)
        else:
            enter(rec, i + 1, t)
        if q:
            retry(key, t + SATURATION_HEADWAY)

    def release_origin(key, t):
        q = st.queue.get(key)
        if not q:
            return
        ready = st.last.get(key, -math.inf) + SATURATION_HEADWAY
        if ready > t + 1e-9:
            retry(key, ready)
            return
        rec = q[0]
        if not has_space(rec, 0):
            st.waiting.setdefault(rec.path[0], []).append(key)
            return
        q.popleft()
        st.last[key] = t
        enter(rec, 0, t)
        if q:
            retry(key, t + SATURATION_HEADWAY)

    while events:
        t, _, kind, data = heapq.heappop(events)
        if t > duration:
            break
        if kind == "appear":
            rec = data
            key = (rec.path[0], -1)  # origin queue before the first link
            st.queue.setdefault(key, deque()).append(rec)
            pos[rec.vid] = -1
            retry(key, max(t, st.last.get(key, -math.inf) + SATURATION_HEADWAY))
        elif kind == "reach":
            rec = data
            key = (rec.path[pos[rec.vid]], lane_of[rec.vid])
            st.queue.setdefault(key, deque()).append(rec)
            try_discharge(key, t)
        elif kind == "resume":
            enter(data, pos[data.vid] + 1, t)
        elif kind == "try":
            if pending.get(data) != t:
                continue  # superseded by an earlier retry
            del pending[data]
            if data[1] == -1:
                release_origin(data, t)
            else:
                try_discharge(data, t)
    return records


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------
def simulate_once(s: Scenario, control: ControlScheme, rates, duration: float,
                  seed: int) -> list[VehicleRecord]:
    """One run; returns every vehicle record, completed or not."""
    if control.kind == "rch":
        return _run_rch(s, control, rates, duration, seed)
    if control.kind == "tsc":
        return _run_tsc(s, control, rates, duration, seed)
    raise ValueError(f"unknown control kind {control.kind!r}")


def check_records(s: Scenario, records: list[VehicleRecord]) -> None:
    """Check path continuity and per-lane FIFO of completed car trips.

    Raises
    ------
    SimulationError
    """
    by_link: dict[int, list] = {}
    for rec in records:
        if rec.exit is None or rec.kind != "car":
            continue
        nodes = iter_path_nodes(s, rec.path)
        if len(rec.node_times) != len(nodes):
            raise SimulationError(f"vehicle {rec.vid}: node times do not match its path")
        if any(b < a - 1e-9 for a, b in zip(rec.node_times, rec.node_times[1:])):
            raise SimulationError(f"vehicle {rec.vid}: time runs backwards")
        for i, a in enumerate(rec.path):
            lane = rec.lanes[i] if i < len(rec.lanes) else 0
            by_link.setdefault((a, lane), []).append((rec.node_times[i], rec.node_times[i + 1], rec.vid))
    for (a, lane), items in by_link.items():
        if s.link(a).virtual:
            continue
        items.sort()
        exits = [x[1] for x in items]
        if any(b < a_ - 1e-9 for a_, b in zip(exits, exits[1:])):
            raise SimulationError(f"link {a} lane {lane}: vehicles overtake")


def run_simulation(s: Scenario, control: ControlScheme, demand_level: float,
                   duration: float = 3600.0, seed: int = 0, repetitions: int = 1,
                   capacity: dict | None = None, keep_trajectories: bool = False) -> SimReport:
    """Simulate ``repetitions`` runs with seeds ``seed, seed+1, ...`` and pool the trips.

    Parameters
    ----------
    demand_level : float
        Fraction of each O-D's admissible bound; converted to vehicles per
        second with :func:`demand_rates`.
    capacity : dict, optional
        Per-O-D admissible bound override, so different networks can share
        one absolute demand.
    """
    rates = demand_rates(s, demand_level, capacity)
    cars, buses, done, pending, entered = [], [], 0, 0, 0
    keep: list[VehicleRecord] = []
    for rep in range(repetitions):
        records = simulate_once(s, control, rates, duration, seed + rep)
        for rec in records:
            entered += 1
            if rec.exit is not None and rec.exit <= duration:
                done += 1
                (cars if rec.kind == "car" else buses).append(rec.travel_time)
            else:
                pending += 1
        if keep_trajectories:
            keep.extend(records)
    hours = duration / 3600.0 * repetitions
    return SimReport(control.name, demand_level, duration, repetitions,
                     float(np.mean(cars)) if cars else math.nan,
                     float(np.mean(buses)) if buses else math.nan,
                     done / hours if hours > 0 else 0.0, done, pending, entered, keep)


def demand_sweep(s: Scenario, controls: list[ControlScheme], levels, duration: float = 3600.0,
                 seed: int = 0, repetitions: int = 5, capacity: dict | None = None) -> list[SimReport]:
    return [run_simulation(s, c, lv, duration, seed, repetitions, capacity)
            for c in controls for lv in levels]


def write_report_csv(reports: list[SimReport], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.row().items()})


def write_trajectory_csv(records: list[VehicleRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle", "kind", "group", "appear", "exit", "path", "node_times"])
        for r in records:
            w.writerow([r.vid, r.kind, r.group, f"{r.appear:.3f}",
                        "" if r.exit is None else f"{r.exit:.3f}",
                        " ".join(map(str, r.path)), " ".join(f"{x:.3f}" for x in r.node_times)])
