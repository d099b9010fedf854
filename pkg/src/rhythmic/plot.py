"""Time-space diagrams as standalone SVG.

The vertical axis is position along a path, measured in free-flow seconds
from its first real node; the horizontal axis is time. Platoon bands are
drawn grey (background pace) or amber (delayed), dedicated platoons blue,
bus trajectories dark blue, and car flows red with stroke width growing
with volume and opacity growing with delay.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .design import RchPlan
from .network import Scenario
from .rhythm import BackgroundRhythm

WIDTH, HEIGHT = 900, 520
MARGIN = 60


class PlotError(ValueError):
    """Unknown path selector or unusable input."""


def resolve_path(s: Scenario, selector: str) -> tuple[int, ...]:
    """Link sequence for ``"w:r"`` (demand w, path r) or ``"bus:<line id>"``."""
    try:
        if selector.startswith("bus:"):
            line_id = int(selector[4:])
            line = next(b for b in s.bus_lines if b.id == line_id)
            return tuple(a.id for a in s.bus_links(line))
        w, r = (int(x) for x in selector.split(":"))
        return tuple(s.demands[w].paths[r])
    except (ValueError, StopIteration, IndexError) as exc:
        raise PlotError(f"unknown path id {selector!r}") from exc


class _Canvas:
    def __init__(self, t_max: float, y_max: float, title: str):
        self.t_max = max(t_max, 1.0)
        self.y_max = max(y_max, 1.0)
        self.items: list[str] = []
        self.title = title

    def x(self, t: float) -> float:
        return MARGIN + (WIDTH - 2 * MARGIN) * t / self.t_max

    def y(self, d: float) -> float:
        return HEIGHT - MARGIN - (HEIGHT - 2 * MARGIN) * d / self.y_max

    def line(self, t0, d0, t1, d1, color, width=1.0, opacity=1.0, cls=""):
        self.items.append(
            f'<line class="{cls}" x1="{self.x(t0):.2f}" y1="{self.y(d0):.2f}" '
            f'x2="{self.x(t1):.2f}" y2="{self.y(d1):.2f}" stroke="{color}" '
            f'stroke-width="{width:.2f}" stroke-opacity="{opacity:.2f}"/>')

    def render(self, ticks_t: float, node_marks: list[float]) -> str:
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
               f'viewBox="0 0 {WIDTH} {HEIGHT}">',
               f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-size="14">'
               f'{escape(self.title)}</text>',
               f'<g class="axes" stroke="black">'
               f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}"/>'
               f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}"/></g>']
        t = 0.0
        while t <= self.t_max + 1e-9:
            out.append(f'<text class="tick" x="{self.x(t):.2f}" y="{HEIGHT - MARGIN + 16}" '
                       f'font-size="10" text-anchor="middle">{t:g}</text>')
            t += ticks_t
        for d in node_marks:
            out.append(f'<line class="node" x1="{MARGIN}" y1="{self.y(d):.2f}" x2="{WIDTH - MARGIN}" '
                       f'y2="{self.y(d):.2f}" stroke="#ddd" stroke-width="0.5"/>')
        out.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" font-size="11" '
                   f'text-anchor="middle">time (s)</text>')
        out.append(f'<text x="16" y="{HEIGHT / 2:.0f}" font-size="11" transform="rotate(-90 16 '
                   f'{HEIGHT / 2:.0f})" text-anchor="middle">position (free-flow s)</text>')
        out.extend(self.items)
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _positions(s: Scenario, path) -> dict[int, tuple[float, float]]:
    pos, d = {}, 0.0
    for a in path:
        link = s.link(a)
        if link.virtual:
            continue
        pos[a] = (d, d + link.car_min_time)
        d += link.car_min_time
    return pos


def plan_diagram(s: Scenario, rh: BackgroundRhythm, plan: RchPlan, path, cycles: int = 2,
                 title: str = "") -> str:
    """Platoon bands, bus trajectories and car flows of ``plan`` along ``path``."""
    pos = _positions(s, path)
    T, Q, H = s.T, s.Q, s.H
    y_max = max((p[1] for p in pos.values()), default=1.0)
    cv = _Canvas(cycles * H, y_max, title)
    # absolute slot times are taken relative to a common origin along the path
    origin: dict[int, int] = {}
    k = 0
    for a in path:
        if a not in pos:
            continue
        origin[a] = k
        k += rh.alpha[a]
    for a, (d0, d1) in pos.items():
        ded = plan.dedicated.get(a, set())
        for q, h in sorted(plan.realized.get(a, set())):
            delay = (h - q - rh.alpha[a]) % Q
            color = "#3366cc" if (q, h) in ded else ("#bbbbbb" if delay == 0 else "#e0a030")
            for n in range(-1, cycles + 1):
                t0 = rh.tau[s.link(a).tail] + ((q - 1 - origin[a]) % Q + n * Q + origin[a]) * T
                t1 = t0 + rh.travel_time(a) + delay * T
                if t1 < 0 or t0 > cycles * H:
                    continue
                cv.line(t0, d0, t1, d1, color, 3.0, 0.5, "platoon")
    for line in s.bus_lines:
        for (p, a), (q, h) in sorted(plan.bus.vps.items()):
            if p != line.id or a not in pos:
                continue
            d0, d1 = pos[a]
            delay = (h - q - rh.alpha[a]) % Q
            for n in range(-1, cycles + 1):
                t0 = rh.tau[s.link(a).tail] + ((q - 1 - origin[a]) % Q + n * Q + origin[a]) * T
                t1 = t0 + rh.travel_time(a) + delay * T
                if t1 < 0 or t0 > cycles * H:
                    continue
                cv.line(t0, d0, t1, d1, "#102a6b", 1.5, 1.0, "bus")
    vol: dict = {}
    for (w, r, a, q, h), v in plan.pi.items():
        if a in pos:
            vol[(a, q, h)] = vol.get((a, q, h), 0.0) + v
    vmax = max(vol.values(), default=1.0)
    for (a, q, h), v in sorted(vol.items()):
        d0, d1 = pos[a]
        delay = (h - q - rh.alpha[a]) % Q
        t0 = rh.tau[s.link(a).tail] + ((q - 1 - origin[a]) % Q + origin[a]) * T
        t1 = t0 + rh.travel_time(a) + delay * T
        cv.line(t0, d0, t1, d1, "#cc2222", 0.5 + 3.0 * v / vmax, 0.35 + 0.65 * min(1.0, delay / 4),
                "car")
    marks = sorted({p[0] for p in pos.values()} | {p[1] for p in pos.values()})
    return cv.render(H / 4, marks)


def trajectory_diagram(s: Scenario, records, path, t_max: float | None = None,
                       title: str = "") -> str:
    """Vehicle trajectories (from a simulation log) that use every link of ``path``."""
    pos = _positions(s, path)
    path_set = set(pos)
    chosen = [r for r in records if r.node_times and path_set and path_set <= set(r.path)]
    if t_max is None:
        t_max = max((r.node_times[-1] for r in chosen), default=s.H)
    y_max = max((p[1] for p in pos.values()), default=1.0)
    cv = _Canvas(t_max, y_max, title)
    for r in chosen:
        color = "#102a6b" if r.kind == "bus" else "#cc2222"
        for i, a in enumerate(r.path):
            if a in pos and i + 1 < len(r.node_times):
                d0, d1 = pos[a]
                cv.line(r.node_times[i], d0, r.node_times[i + 1], d1, color, 0.8, 0.8, r.kind)
    marks = sorted({p[0] for p in pos.values()} | {p[1] for p in pos.values()})
    return cv.render(max(s.H, t_max / 10), marks)


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
