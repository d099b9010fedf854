"""Procedural one-way grid used for the network-scale experiments.

The default grid has 3 east-west and 6 north-south one-way roads crossing at
18 four-way junctions. Directions alternate road by road. The east end of
the top row bends into the middle row, so the middle row has no boundary
entry. Five mid-block stations serve four bus lines, two mid-block
junctions generate and absorb traffic, and every car origin gets a virtual
entrance link acting as a waiting zone.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .network import BusLine, Link, Node, OdDemand, Scenario, validate_scenario

CAR_SPEED = 15.0  # m/s
BUS_SPEED = 10.0  # m/s


@dataclass(frozen=True)
class GridLayout:
    rows: int = 3
    cols: int = 6
    ew_block: float = 150.0  # metres between adjacent columns
    ns_block: float = 300.0  # metres between adjacent rows
    stub: float = 150.0  # entry / exit / bend links
    lanes: int = 2


def _times(length: float) -> tuple[float, float]:
    return length / CAR_SPEED, length / BUS_SPEED


class _Builder:
    def __init__(self, layout: GridLayout):
        self.layout = layout
        self.nodes: dict[int, Node] = {}
        self.links: list[Link] = []
        self.length: dict[tuple[int, int], float] = {}
        self.next_node = layout.rows * layout.cols + 1
        for k in range(1, self.next_node):
            self.nodes[k] = Node(k, "intersection")

    def junction(self, r: int, c: int) -> int:
        return r * self.layout.cols + c + 1

    def new_node(self, kind: str, platform: str | None = None) -> int:
        k = self.next_node
        self.nodes[k] = Node(k, kind, platform)
        self.next_node += 1
        return k

    def connect(self, tail: int, head: int, length: float) -> None:
        self.length[(tail, head)] = length

    def split(self, tail: int, head: int, kind: str, platform: str | None = None) -> int:
        """Insert a mid-block node halfway along ``tail -> head``."""
        length = self.length.pop((tail, head))
        mid = self.new_node(kind, platform)
        self.length[(tail, mid)] = length / 2
        self.length[(mid, head)] = length / 2
        return mid

    def finish(self, virtual_for: list[int]) -> tuple[dict[int, int], list[Link]]:
        links = []
        for lid, ((tail, head), length) in enumerate(sorted(self.length.items()), start=1):
            car, bus = _times(length)
            links.append(Link(lid, tail, head, self.layout.lanes, car, bus))
        virtual = {}
        lid = len(links) + 1
        for node in virtual_for:
            v = self.new_node("virtual")
            links.append(Link(lid, v, node, 1, 0.0, 0.0, virtual=True))
            virtual[node] = v
            lid += 1
        return virtual, links


def build_grid(layout: GridLayout | None = None) -> Scenario:
    """Build the compact (unexpanded) grid scenario with zero demand.

    Returns
    -------
    Scenario
        Junctions are nodes 1..rows*cols in row-major order. O-D candidate
        paths are left empty; they are enumerated after expansion.
    """
    layout = layout or GridLayout()
    if (layout.rows, layout.cols) != (3, 6):
        raise ValueError("only the 3x6 layout carries the bundled bus lines and demands")
    b = _Builder(layout)
    J = b.junction
    rows, cols = layout.rows, layout.cols
    entries, exits = {}, {}

    # east-west roads: even rows eastbound, odd rows westbound
    for r in range(rows):
        order = [J(r, c) for c in (range(cols) if r % 2 == 0 else reversed(range(cols)))]
        for u, v in zip(order[:-1], order[1:]):
            b.connect(u, v, layout.ew_block)
        if r != 1:
            entries[("row", r)] = e = b.new_node("origin")
            b.connect(e, order[0], layout.stub)
        if r != 0:
            exits[("row", r)] = x = b.new_node("destination")
            b.connect(order[-1], x, layout.stub)
    bend = b.new_node("intersection")
    b.connect(J(0, cols - 1), bend, layout.stub)
    b.connect(bend, J(1, cols - 1), layout.stub)

    # north-south roads: even columns southbound, odd columns northbound
    for c in range(cols):
        order = [J(r, c) for r in (range(rows) if c % 2 == 0 else reversed(range(rows)))]
        for u, v in zip(order[:-1], order[1:]):
            b.connect(u, v, layout.ns_block)
        entries[("col", c)] = e = b.new_node("origin")
        b.connect(e, order[0], layout.stub)
        exits[("col", c)] = x = b.new_node("destination")
        b.connect(order[-1], x, layout.stub)

    s1 = b.split(J(2, 1), J(2, 2), "station", "side")
    s2 = b.split(J(2, 3), J(2, 4), "station", "side")
    s3 = b.split(J(0, 0), J(1, 0), "station", "mainline")
    s4 = b.split(J(0, 2), J(0, 3), "station", "side")
    s5 = b.split(J(1, 3), J(1, 2), "station", "side")
    j1 = b.split(J(1, 5), J(1, 4), "origin")
    j2 = b.split(J(2, 4), J(2, 5), "origin")

    e_r0, e_r2 = entries[("row", 0)], entries[("row", 2)]
    e_c0, e_c1, e_c2, e_c3 = (entries[("col", c)] for c in range(4))
    x_r1, x_r2, x_c4 = exits[("row", 1)], exits[("row", 2)], exits[("col", 4)]

    row2 = [J(2, c) for c in range(cols)]
    bus_routes = [
        (1, [e_r2, row2[0], row2[1], s1, row2[2], row2[3], s2, row2[4], j2, row2[5], x_r2],
         (s1, s2)),
        (2, [e_c0, J(0, 0), s3, J(1, 0), J(2, 0), row2[1], s1, row2[2], row2[3], s2, row2[4],
             j2, row2[5], x_r2], (s3, s1, s2)),
        (3, [e_r0, J(0, 0), J(0, 1), J(0, 2), s4, J(0, 3), J(0, 4), J(0, 5), bend, J(1, 5), j1,
             J(1, 4), J(1, 3), s5, J(1, 2), J(1, 1), J(1, 0), x_r1], (s4, s5)),
        (4, [e_c3, J(2, 3), J(1, 3), s5, J(1, 2), J(1, 1), J(1, 0), x_r1], (s5,)),
    ]
    od_pairs = [
        (e_r0, x_r2),  # entrance -> exit
        (e_c1, exits[("col", 5)]),
        (e_c2, j1),  # entrance -> junction
        (e_c1, j2),
        (j1, x_c4),  # junction -> exit
        (j2, x_r1),
    ]
    origins = sorted({o for o, _ in od_pairs})
    virtual, links = b.finish(origins)
    lines = tuple(BusLine(i, tuple(route), stations, min_dwell=40.0, passengers=20.0, size=2)
                  for i, route, stations in bus_routes)
    demands = tuple(OdDemand(virtual[o], d, 0.0) for o, d in od_pairs)
    nodes = tuple(sorted(b.nodes.values(), key=lambda n: n.id))
    s = Scenario(nodes, tuple(links), lines, demands, T=10.0, H=120.0, platoon_size=4,
                 omega=0.9, name="grid-3x6")
    validate_scenario(s)
    return s


def set_demand_level(s: Scenario, level: float, per_od: list[float] | None = None) -> Scenario:
    """Scale every O-D rate to ``level`` times its admissible bound.

    Candidate paths are enumerated first if missing. ``per_od`` optionally
    gives a separate level for each O-D pair.
    """
    from .network import with_candidate_paths
    from .rhythm import max_admissible_traffic

    if any(not d.paths for d in s.demands):
        s = with_candidate_paths(s)
    cap = max_admissible_traffic(s)
    levels = per_od if per_od is not None else [level] * len(s.demands)
    rates = [lv * cap.per_od[d.key] / s.Q for lv, d in zip(levels, s.demands)]
    return replace(s, demands=tuple(replace(d, rate=r) for d, r in zip(s.demands, rates)))
