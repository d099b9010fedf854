"""Scenario model: nodes, links, bus lines and O-D demands on a directed graph.

Scenarios are immutable. Helpers that "modify" a scenario return a new one
via :func:`dataclasses.replace`.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

SCENARIO_FORMAT = "rch-scenario"
SCENARIO_VERSION = 1

NODE_KINDS = ("origin", "destination", "station", "intersection", "virtual")
PLATFORMS = ("mainline", "side")


class ScenarioError(ValueError):
    """Raised when a scenario violates a structural invariant."""


class ScenarioParseError(ScenarioError):
    """Raised when a scenario file cannot be parsed."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    platform: str | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ScenarioError(f"node {self.id}: unknown kind {self.kind!r}")
        if (self.kind == "station") != (self.platform is not None):
            raise ScenarioError(
                f"node {self.id}: station_platform must be set iff kind is station")
        if self.platform is not None and self.platform not in PLATFORMS:
            raise ScenarioError(f"node {self.id}: unknown platform {self.platform!r}")


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    lanes: int
    car_min_time: float
    bus_min_time: float
    virtual: bool = False
    platoon_size: int | None = None  # overrides Scenario.platoon_size

    def __post_init__(self):
        if self.lanes < 1:
            raise ScenarioError(f"link {self.id}: lanes must be positive")
        if not (self.bus_min_time >= self.car_min_time >= 0):
            raise ScenarioError(
                f"link {self.id}: need bus_min_time >= car_min_time >= 0")
        if self.virtual and (self.car_min_time != 0 or self.bus_min_time != 0):
            raise ScenarioError(f"link {self.id}: virtual links have zero times")


@dataclass(frozen=True)
class BusLine:
    id: int
    route: tuple[int, ...]
    stations: tuple[int, ...] = ()
    min_dwell: float = 40.0
    passengers: float = 20.0
    size: int = 2


@dataclass(frozen=True)
class OdDemand:
    origin: int
    destination: int
    rate: float
    paths: tuple[tuple[int, ...], ...] = ()

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin, self.destination)


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    bus_lines: tuple[BusLine, ...] = ()
    demands: tuple[OdDemand, ...] = ()
    T: float = 10.0
    H: float = 120.0
    platoon_size: int = 4
    omega: float = 0.9
    epsilon: float = 1e-3
    k_paths: int = 3
    crossing_time: float | None = None
    name: str = ""
    _index: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        index = {
            "node": {n.id: n for n in self.nodes},
            "link": {a.id: a for a in self.links},
            "arc": {(a.tail, a.head): a for a in self.links},
            "out": {n.id: [] for n in self.nodes},
            "in": {n.id: [] for n in self.nodes},
        }
        for a in self.links:
            index["out"].setdefault(a.tail, []).append(a)
            index["in"].setdefault(a.head, []).append(a)
        object.__setattr__(self, "_index", index)

    # -- lookups --------------------------------------------------------
    @property
    def Q(self) -> int:
        return int(round(self.H / self.T))

    def node(self, node_id: int) -> Node:
        return self._index["node"][node_id]

    def link(self, link_id: int) -> Link:
        return self._index["link"][link_id]

    def arc(self, tail: int, head: int) -> Link:
        try:
            return self._index["arc"][(tail, head)]
        except KeyError:
            raise ScenarioError(f"no link {tail}->{head}") from None

    def out_links(self, node_id: int) -> list[Link]:
        return self._index["out"].get(node_id, [])

    def in_links(self, node_id: int) -> list[Link]:
        return self._index["in"].get(node_id, [])

    def size_of(self, link: Link | int) -> int:
        if isinstance(link, int):
            link = self.link(link)
        return link.platoon_size if link.platoon_size is not None else self.platoon_size

    def bus_links(self, line: BusLine) -> list[Link]:
        return [self.arc(i, j) for i, j in zip(line.route[:-1], line.route[1:])]

    def stations(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "station"]

    def path_time(self, path: Sequence[int]) -> float:
        return sum(self.link(a).car_min_time for a in path)

    # -- derived scenarios ---------------------------------------------
    def with_params(self, **kwargs) -> "Scenario":
        return replace(self, **kwargs)

    def with_demand_rates(self, rates: Sequence[float]) -> "Scenario":
        if len(rates) != len(self.demands):
            raise ScenarioError("one rate per O-D demand required")
        demands = tuple(replace(d, rate=float(r)) for d, r in zip(self.demands, rates))
        return replace(self, demands=demands)

    def validate(self) -> "Scenario":
        validate_scenario(self)
        return self


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------
def validate_scenario(s: Scenario) -> None:
    ids = [n.id for n in s.nodes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("node ids must be unique")
    lids = [a.id for a in s.links]
    if len(set(lids)) != len(lids):
        raise ScenarioError("link ids must be unique")
    if len({(a.tail, a.head) for a in s.links}) != len(s.links):
        raise ScenarioError("parallel links are not supported")
    node_ids = set(ids)
    for a in s.links:
        if a.tail not in node_ids or a.head not in node_ids:
            raise ScenarioError(f"link {a.id}: unknown endpoint")
    if s.T <= 0 or s.H <= 0:
        raise ScenarioError("T and H must be positive")
    q = s.H / s.T
    if abs(q - round(q)) > 1e-9 or round(q) < 1:
        raise ScenarioError(f"H={s.H} is not a positive integer multiple of T={s.T}")
    if not 0.0 <= s.omega <= 1.0:
        raise ScenarioError("omega must lie in [0, 1]")
    if not 0.0 < s.epsilon < s.T:
        raise ScenarioError("epsilon must lie in (0, T)")
    if s.platoon_size < 1:
        raise ScenarioError("platoon size must be positive")
    for line in s.bus_lines:
        if len(line.route) < 2:
            raise ScenarioError(f"bus line {line.id}: route needs two nodes")
        for i, j in zip(line.route[:-1], line.route[1:]):
            if (i, j) not in s._index["arc"]:
                raise ScenarioError(f"bus line {line.id}: route is not a connected path at {i}->{j}")
        inner = set(line.route[1:-1])
        for st in line.stations:
            if st not in inner:
                raise ScenarioError(f"bus line {line.id}: station {st} not an interior route node")
            if s.node(st).kind != "station":
                raise ScenarioError(f"bus line {line.id}: node {st} is not a station")
        for a in s.bus_links(line):
            if a.virtual:
                raise ScenarioError(f"bus line {line.id}: buses cannot use virtual link {a.id}")
            if line.size > s.size_of(a):
                raise ScenarioError(f"bus line {line.id}: bus larger than platoon on link {a.id}")
    for d in s.demands:
        if d.rate < 0:
            raise ScenarioError(f"demand {d.key}: negative rate")
        for path in d.paths:
            check_path(s, path, d.origin, d.destination)


def check_path(s: Scenario, path: Sequence[int], origin: int, destination: int) -> None:
    if not path:
        raise ScenarioError("empty path")
    links = [s.link(a) for a in path]
    if links[0].tail != origin or links[-1].head != destination:
        raise ScenarioError(f"path {tuple(path)} does not connect {origin} to {destination}")
    for a, b in zip(links[:-1], links[1:]):
        if a.head != b.tail:
            raise ScenarioError(f"path {tuple(path)} is not contiguous")
    nodes = [links[0].tail] + [a.head for a in links]
    if len(set(nodes)) != len(nodes):
        raise ScenarioError(f"path {tuple(path)} has a loop")


# ----------------------------------------------------------------------
# file IO
# ----------------------------------------------------------------------
def scenario_to_dict(s: Scenario) -> dict:
    params = {
        "T": s.T, "H": s.H, "platoon_size": s.platoon_size, "omega": s.omega,
        "epsilon": s.epsilon, "k_paths": s.k_paths,
    }
    if s.crossing_time is not None:
        params["crossing_time"] = s.crossing_time
    nodes = []
    for n in sorted(s.nodes, key=lambda n: n.id):
        item = {"id": n.id, "kind": n.kind}
        if n.platform is not None:
            item["station_platform"] = n.platform
        nodes.append(item)
    links = []
    for a in sorted(s.links, key=lambda a: a.id):
        item = {"id": a.id, "from": a.tail, "to": a.head, "lanes": a.lanes,
                "car_min_time": a.car_min_time, "bus_min_time": a.bus_min_time,
                "virtual": a.virtual}
        if a.platoon_size is not None:
            item["platoon_size"] = a.platoon_size
        links.append(item)
    lines = [{"id": b.id, "route": list(b.route), "stations": list(b.stations),
              "min_dwell": b.min_dwell, "passengers": b.passengers, "size": b.size}
             for b in sorted(s.bus_lines, key=lambda b: b.id)]
    demands = [{"origin": d.origin, "destination": d.destination, "rate": d.rate,
                "paths": [list(p) for p in d.paths]} for d in s.demands]
    return {"format": SCENARIO_FORMAT, "version": SCENARIO_VERSION, "name": s.name,
            "params": params, "nodes": nodes, "links": links,
            "bus_lines": lines, "demands": demands}


def scenario_from_dict(data: dict) -> Scenario:
    try:
        if data.get("format") != SCENARIO_FORMAT:
            raise ScenarioParseError(f"not an {SCENARIO_FORMAT} document")
        if int(data.get("version", 0)) != SCENARIO_VERSION:
            raise ScenarioParseError(f"unsupported version {data.get('version')}")
        p = data.get("params", {})
        nodes = tuple(Node(int(n["id"]), n["kind"], n.get("station_platform"))
                      for n in data["nodes"])
        links = tuple(Link(int(a["id"]), int(a["from"]), int(a["to"]), int(a.get("lanes", 1)),
                           float(a["car_min_time"]), float(a["bus_min_time"]),
                           bool(a.get("virtual", False)),
                           None if a.get("platoon_size") is None else int(a["platoon_size"]))
                      for a in data["links"])
        lines = tuple(BusLine(int(b["id"]), tuple(int(v) for v in b["route"]),
                              tuple(int(v) for v in b.get("stations", ())),
                              float(b.get("min_dwell", 40.0)), float(b.get("passengers", 20.0)),
                              int(b.get("size", 2)))
                      for b in data.get("bus_lines", []))
        demands = tuple(OdDemand(int(d["origin"]), int(d["destination"]), float(d["rate"]),
                                 tuple(tuple(int(a) for a in path) for path in d.get("paths", [])))
                        for d in data.get("demands", []))
        crossing = p.get("crossing_time")
        s = Scenario(nodes, links, lines, demands, T=float(p.get("T", 10.0)),
                     H=float(p.get("H", 120.0)), platoon_size=int(p.get("platoon_size", 4)),
                     omega=float(p.get("omega", 0.9)), epsilon=float(p.get("epsilon", 1e-3)),
                     k_paths=int(p.get("k_paths", 3)),
                     crossing_time=None if crossing is None else float(crossing),
                     name=str(data.get("name", "")))
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc}") from exc
    validate_scenario(s)
    return s


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n"


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(s))


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file.

    Raises
    ------
    ScenarioParseError
        The file is not valid JSON or misses required fields.
    ScenarioError
        A structural invariant is violated (the message names it).
    """
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


# ----------------------------------------------------------------------
# paths
# ----------------------------------------------------------------------
def _spur_dijkstra(s: Scenario, source: int, target: int, banned_nodes: set,
                   banned_links: set) -> tuple[float, tuple[int, ...]] | None:
    # labels compare (cost, link-id sequence); lexicographic order survives extension
    best: dict[int, tuple[float, tuple[int, ...]]] = {source: (0.0, ())}
    heap = [(0.0, (), source)]
    done = set()
    while heap:
        cost, seq, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        if v == target:
            return cost, seq
        for a in s.out_links(v):
            w = a.head
            if w in banned_nodes or a.id in banned_links or w in done:
                continue
            label = (cost + a.car_min_time, seq + (a.id,))
            if w not in best or label < best[w]:
                best[w] = label
                heapq.heappush(heap, (label[0], label[1], w))
    return None


def k_shortest_paths(s: Scenario, origin: int, destination: int, k: int) -> list[tuple[int, ...]]:
    """Loop-free paths from ``origin`` to ``destination`` by free-flow car time.

    Yen's algorithm over the total order (cost, link-id sequence), so ties are
    broken lexicographically. Returns fewer than ``k`` paths when the graph
    has fewer.
    """
    if k <= 0:
        return []
    first = _spur_dijkstra(s, origin, destination, set(), set())
    if first is None:
        raise ScenarioError(f"O-D pair {origin}->{destination} is disconnected")
    found = [first]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {first[1]}
    while len(found) < k:
        _, last = found[-1]
        nodes = [origin] + [s.link(a).head for a in last]
        for i in range(len(last)):
            root = last[:i]
            spur_node = nodes[i]
            banned_links = {p[i] for _, p in found if p[:i] == root and len(p) > i}
            banned_nodes = set(nodes[:i])
            spur = _spur_dijkstra(s, spur_node, destination, banned_nodes, banned_links)
            if spur is None:
                continue
            path = root + spur[1]
            if path in seen:
                continue
            seen.add(path)
            heapq.heappush(candidates, (s.path_time(path), path))
        if not candidates:
            break
        found.append(heapq.heappop(candidates))
    return [p for _, p in found]


def with_candidate_paths(s: Scenario, k: int | None = None, overwrite: bool = False) -> Scenario:
    """Fill missing candidate path sets with the ``k`` shortest paths."""
    k = s.k_paths if k is None else k
    demands = []
    for d in s.demands:
        if d.paths and not overwrite:
            demands.append(d)
        else:
            demands.append(replace(d, paths=tuple(k_shortest_paths(s, d.origin, d.destination, k))))
    return replace(s, demands=tuple(demands))


# ----------------------------------------------------------------------
# intersection expansion
# ----------------------------------------------------------------------
def compact_intersections(s: Scenario) -> list[int]:
    """Intersection nodes that expansion would split (more than one approach or exit)."""
    out = []
    for n in s.nodes:
        if n.kind != "intersection":
            continue
        deg_in, deg_out = len(s.in_links(n.id)), len(s.out_links(n.id))
        if deg_in + deg_out > 4:
            raise ScenarioError(f"intersection {n.id}: {deg_in + deg_out} approaches, at most 4 supported")
        if deg_in >= 2 or deg_out >= 2:
            out.append(n.id)
    return out


def expand_intersections(s: Scenario, crossing_time: float | None = None) -> tuple[Scenario, dict]:
    """Replace every compact junction by one node per approach and per exit.

    Each approach node is joined to each exit node by an internal turning
    link of ``crossing_time`` seconds (default: the scenario's
    ``crossing_time`` or T/2). Half of that time is carved out of the
    adjacent road links, so every compact path keeps its free-flow time.

    Returns the expanded scenario and a mapping with the compact-to-expanded
    link translation (``"link_map"``), the internal links per
    (in-link, out-link) movement (``"movement"``) and the new node ids per
    junction (``"junction_nodes"``).
    """
    if crossing_time is None:
        crossing_time = s.crossing_time if s.crossing_time is not None else s.T / 2
    junctions = compact_intersections(s)
    if not junctions:
        return s, {"link_map": {a.id: a.id for a in s.links}, "movement": {}, "junction_nodes": {}}
    half = crossing_time / 2
    next_node = max(n.id for n in s.nodes) + 1
    next_link = max(a.id for a in s.links) + 1
    nodes = [n for n in s.nodes if n.id not in set(junctions)]
    tail_of = {a.id: a.tail for a in s.links}
    head_of = {a.id: a.head for a in s.links}
    shave = {a.id: 0.0 for a in s.links}
    junction_nodes: dict[int, dict] = {}
    internal: list[Link] = []
    movement: dict[tuple[int, int], int] = {}
    for j in junctions:
        ins = sorted(a.id for a in s.in_links(j))
        outs = sorted(a.id for a in s.out_links(j))
        in_nodes, out_nodes = {}, {}
        for a in ins:
            in_nodes[a] = next_node
            nodes.append(Node(next_node, "intersection"))
            head_of[a] = next_node
            shave[a] += half
            next_node += 1
        for b in outs:
            out_nodes[b] = next_node
            nodes.append(Node(next_node, "intersection"))
            tail_of[b] = next_node
            shave[b] += half
            next_node += 1
        for a in ins:
            for b in outs:
                lanes = min(s.link(a).lanes, s.link(b).lanes)
                internal.append(Link(next_link, in_nodes[a], out_nodes[b], lanes,
                                     crossing_time, crossing_time))
                movement[(a, b)] = next_link
                next_link += 1
        junction_nodes[j] = {"in": in_nodes, "out": out_nodes}
    links = []
    for a in s.links:
        car = a.car_min_time - shave[a.id]
        bus = a.bus_min_time - shave[a.id]
        if car < -1e-9:
            raise ScenarioError(f"link {a.id} shorter than the carved crossing time")
        links.append(replace(a, tail=tail_of[a.id], head=head_of[a.id],
                             car_min_time=max(car, 0.0), bus_min_time=max(bus, 0.0)))
    links.extend(internal)
    junction_set = set(junctions)

    def expand_link_path(path: Sequence[int]) -> tuple[int, ...]:
        out: list[int] = []
        for a, b in zip(path[:-1], path[1:]):
            out.append(a)
            if s.link(a).head in junction_set:
                out.append(movement[(a, b)])
        if path:
            out.append(path[-1])
        return tuple(out)

    def node_route(route: Sequence[int]) -> tuple[int, ...]:
        arcs = [s.arc(i, j).id for i, j in zip(route[:-1], route[1:])]
        expanded = expand_link_path(arcs)
        lk = {a.id: a for a in links}
        return (lk[expanded[0]].tail,) + tuple(lk[a].head for a in expanded)

    for line in s.bus_lines:
        if line.route[0] in junction_set or line.route[-1] in junction_set:
            raise ScenarioError(f"bus line {line.id} cannot start or end inside a junction")
    lines = tuple(replace(b, route=node_route(b.route)) for b in s.bus_lines)
    demands = []
    for d in s.demands:
        if d.origin in junction_set or d.destination in junction_set:
            raise ScenarioError("O-D endpoints cannot be compact junctions")
        demands.append(replace(d, paths=tuple(expand_link_path(p) for p in d.paths)))
    expanded = Scenario(tuple(sorted(nodes, key=lambda n: n.id)), tuple(links), lines,
                        tuple(demands), T=s.T, H=s.H, platoon_size=s.platoon_size,
                        omega=s.omega, epsilon=s.epsilon, k_paths=s.k_paths,
                        crossing_time=crossing_time, name=s.name)
    validate_scenario(expanded)
    link_map = {a.id: a.id for a in s.links}
    return expanded, {"link_map": link_map, "movement": movement,
                      "junction_nodes": junction_nodes, "expand_path": expand_link_path}


def conflict_pairs(s: Scenario) -> list[tuple[int, int]]:
    """Node pairs whose outgoing movements meet at a common intersection node."""
    pairs = set()
    for n in s.nodes:
        if n.kind != "intersection":
            continue
        preds = sorted({a.tail for a in s.in_links(n.id) if not a.virtual})
        for x in range(len(preds)):
            for y in range(x + 1, len(preds)):
                pairs.add((preds[x], preds[y]))
    return sorted(pairs)


# ----------------------------------------------------------------------
# bundled scenarios
# ----------------------------------------------------------------------
DATA_DIR = Path(__file__).with_name("data")
TOY_MAX_ADMISSIBLE = 40.0  # (Q-2)*s_a vehicles per RC-H cycle


def toy_scenario(beta: float = 0.5, omega: float = 0.9) -> Scenario:
    """The bundled one-corridor scenario at demand level ``beta``."""
    s = load_scenario(DATA_DIR / "toy.json")
    rate = beta * TOY_MAX_ADMISSIBLE / s.Q
    return replace(s.with_demand_rates([rate]), omega=omega)


def grid_scenario(beta: float = 0.5, omega: float = 0.9, expanded: bool = True) -> Scenario:
    """The bundled one-way grid (18 junctions), optionally expanded."""
    from . import grid

    s = grid.build_grid()
    if expanded:
        s, _ = expand_intersections(s)
    return grid.set_demand_level(s, beta).with_params(omega=omega)


def iter_path_nodes(s: Scenario, path: Iterable[int]) -> list[int]:
    path = list(path)
    if not path:
        return []
    return [s.link(path[0]).tail] + [s.link(a).head for a in path]


def free_flow_cost(s: Scenario) -> float:
    """Vehicle-seconds per RC-H cycle if every O-D uses its fastest candidate path."""
    total = 0.0
    for d in s.demands:
        if d.rate <= 0:
            continue
        best = min(s.path_time(p) for p in d.paths) if d.paths else math.inf
        total += d.rate * s.Q * best
    return total
