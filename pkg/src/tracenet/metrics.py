"""Dynamic metrics: flow completion times, windowed buffer occupancy, heatmaps."""

from __future__ import annotations

import csv
import math
import os
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Iterable, NamedTuple, Sequence

from .kernel import round_half_up
from .svg import Svg

if TYPE_CHECKING:
    from .network.topology import Topology

NIC = "nic"  # endpoint tag, same value as network.topology.NIC

DEFAULT_WINDOW_NS = 100_000_000  # 100 ms


class FctRecord(NamedTuple):
    msg_id: int
    length_bytes: int
    generation_time_ns: int
    delivery_time_ns: int
    session_id: int = 0

    @property
    def fct_ns(self) -> int:
        return self.delivery_time_ns - self.generation_time_ns


def _fcts(records: Iterable) -> list[int]:
    return [r if isinstance(r, int) else r.fct_ns for r in records]


def fct_summary(records: Iterable[FctRecord | int]) -> tuple[int, int, int]:
    """(mean, max, count) in ns; the mean is the exact average rounded half-up."""
    vals = _fcts(records)
    if not vals:
        return 0, 0, 0
    return round_half_up(Fraction(sum(vals), len(vals))), max(vals), len(vals)


def fct_cdf(records: Iterable[FctRecord | int], num_points: int = 100) -> list[tuple[int, float]]:
    """Empirical CDF sampled at the quantiles i/num_points, i = 1..num_points.

    Each point is (fct at that quantile, fraction of records <= that fct).
    Consecutive equal points collapse, so constant input yields one step.
    """
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    vals = sorted(_fcts(records))
    n = len(vals)
    if n == 0:
        return []
    out: list[tuple[int, float]] = []
    for i in range(1, num_points + 1):
        idx = -(-i * n // num_points) - 1
        x = vals[idx]
        frac = bisect_right(vals, x) / n
        if not out or out[-1] != (x, frac):
            out.append((x, frac))
    return out


def cdf_at(records: Iterable[FctRecord | int], x: int) -> float:
    vals = sorted(_fcts(records))
    return bisect_right(vals, x) / len(vals) if vals else 0.0


def speedup(time_config2_ns: float, time_config1_ns: float) -> float:
    if time_config2_ns <= 0 or time_config1_ns <= 0:
        raise ValueError("execution times must be positive")
    return time_config2_ns / time_config1_ns


class PortOccupancy:
    """Per-window maxima of one input buffer, fed on every occupancy change."""

    __slots__ = ("window", "capacity", "cur_win", "cur_max", "last", "last_t", "wins", "maxes", "ends")

    def __init__(self, window_ns: int, capacity: int):
        self.window = window_ns
        self.capacity = capacity
        self.cur_win = -1
        self.cur_max = 0
        self.last = 0
        self.last_t = 0
        self.wins: list[int] = []
        self.maxes: list[int] = []
        self.ends: list[int] = []

    def sample(self, t: int, occ: int) -> None:
        if t < self.last_t:
            raise ValueError(f"occupancy sample at {t} before {self.last_t}")
        w = t // self.window
        if w != self.cur_win:
            if self.cur_win >= 0:
                self.wins.append(self.cur_win)
                self.maxes.append(self.cur_max)
                self.ends.append(self.last)
            self.cur_win = w
            # the level standing at the window start counts toward its max
            self.cur_max = occ if occ > self.last else self.last
        elif occ > self.cur_max:
            self.cur_max = occ
        self.last = occ
        self.last_t = t

    def window_max(self, w: int) -> int:
        if w == self.cur_win:
            return self.cur_max
        if w > self.cur_win:
            return self.last if self.cur_win >= 0 else 0
        i = bisect_right(self.wins, w) - 1
        if i < 0:
            return 0
        return self.maxes[i] if self.wins[i] == w else self.ends[i]


class OccupancyLog:
    """All tracked input ports; keys are (switch, port)."""

    def __init__(self, window_ns: int = DEFAULT_WINDOW_NS):
        if window_ns <= 0:
            raise ValueError("window must be positive")
        self.window_ns = window_ns
        self.ports: dict[tuple[int, int], PortOccupancy] = {}

    def port(self, key: tuple[int, int], capacity: int) -> PortOccupancy:
        if key not in self.ports:
            self.ports[key] = PortOccupancy(self.window_ns, capacity)
        return self.ports[key]

    def record_occupancy(self, key: tuple[int, int], time_ns: int, occupancy_bytes: int) -> None:
        self.ports[key].sample(time_ns, occupancy_bytes)

    def window_max(self, key: tuple[int, int], window_index: int) -> int:
        p = self.ports.get(key)
        return 0 if p is None else p.window_max(window_index)

    def num_windows(self, end_time_ns: int) -> int:
        return end_time_ns // self.window_ns + 1


# --- heatmap -------------------------------------------------------------------


def occupancy_color(o: Fraction | float) -> str:
    """Green when empty, otherwise linear blue -> red over (0, 1]."""
    o = Fraction(o)
    if o <= 0:
        return "#00FF00"
    o = min(o, Fraction(1))
    red = math.floor(255 * o)
    blue = math.floor(255 * (1 - o))
    return f"#{red:02X}00{blue:02X}"


def _layout(topo: "Topology") -> tuple[float, float, dict]:
    pos: dict = {}
    if topo.kind == "fat-tree":
        leaves = [s for s in topo.switches if s.role == "leaf"]
        spines = [s for s in topo.switches if s.role == "spine"]
        nodes = topo.num_nodes
        width = max(nodes * 6 + 80, 600)
        for i, s in enumerate(spines):
            pos[("sw", s.switch_id)] = (40 + (width - 80) * (i + 0.5) / len(spines), 60)
        for i, s in enumerate(leaves):
            pos[("sw", s.switch_id)] = (40 + (width - 80) * (i + 0.5) / len(leaves), 300)
        for n in range(nodes):
            pos[(NIC, n)] = (40 + (width - 80) * (n + 0.5) / nodes, 440)
        return width, 480, pos
    p = topo.params
    G = p["num_groups"]
    size = 1000.0
    c = size / 2
    for s in topo.switches:
        base = 2 * math.pi * s.group / G
        span = 2 * math.pi / G * 0.7
        count = p["spines_per_group"] if s.role == "spine" else p["leaves_per_group"]
        ang = base - span / 2 + span * (s.index + 0.5) / count
        r = 250 if s.role == "spine" else 360
        pos[("sw", s.switch_id)] = (c + r * math.cos(ang), c + r * math.sin(ang))
    T = p["terminals_per_leaf"]
    for n, (leaf, _) in enumerate(topo.nic_attach):
        info = topo.switches[leaf]
        base = 2 * math.pi * info.group / G
        span = 2 * math.pi / G * 0.7
        slot = info.index * T + n % T
        ang = base - span / 2 + span * (slot + 0.5) / (p["leaves_per_group"] * T)
        pos[(NIC, n)] = (c + 450 * math.cos(ang), c + 450 * math.sin(ang))
    return size, size, pos


def render_heatmap(
    topo: "Topology",
    occupancy: OccupancyLog,
    window_index: int,
    out,
    relative: bool = False,
) -> str:
    """Write an SVG snapshot coloring each half-link by its receiving input buffer.

    The half of a cable nearest a device shows that device's input occupancy
    for traffic arriving over the cable. ``relative`` scales by the window's
    largest observed occupancy instead of buffer capacity. NIC inputs drain at
    line rate and are always drawn empty.
    """
    width, height, pos = _layout(topo)

    def fraction(key) -> Fraction:
        p = occupancy.ports.get(key)
        if p is None:
            return Fraction(0)
        denom = peak if relative else p.capacity
        return Fraction(p.window_max(window_index), denom) if denom else Fraction(0)

    peak = max((p.window_max(window_index) for p in occupancy.ports.values()), default=0)
    svg = Svg(width, height)
    svg.text(10, 16, f"{topo.name}: max input occupancy, window {window_index}", size=12)
    seen = set()
    for (ka, ia, pa), (kb, ib, pb) in topo.directed_links():
        a, b = (ka, ia, pa), (kb, ib, pb)
        cable = tuple(sorted((a, b)))
        if cable in seen:
            continue
        seen.add(cable)
        xa, ya = pos[(ka, ia)]
        xb, yb = pos[(kb, ib)]
        mx, my = (xa + xb) / 2, (ya + yb) / 2
        for (kind, ident, port), (x0, y0) in ((a, (xa, ya)), (b, (xb, yb))):
            o = Fraction(0) if kind == NIC else fraction((ident, port))
            svg.line(x0, y0, mx, my, occupancy_color(o), 1.5, title=f"{kind}{ident}:{port} in {float(o):.3f}")
    for (kind, ident), (x, y) in sorted(pos.items()):
        if kind == NIC:
            svg.circle(x, y, 2.5, "#dddddd", title=f"node {ident}")
        else:
            svg.rect(x - 7, y - 7, 14, 14, "#555555", title=f"switch {ident}")
    text = svg.render()
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text


# --- bundle output ---------------------------------------------------------------


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_fct_csv(path, records: Sequence[FctRecord], session_names: dict[int, str]) -> None:
    rows = [
        [r.msg_id, r.length_bytes, r.generation_time_ns, r.delivery_time_ns, r.fct_ns, session_names[r.session_id]]
        for r in records
    ]
    _write_csv(path, ["msg_id", "bytes", "gen_ns", "deliver_ns", "fct_ns", "session"], rows)


def write_cdf_csv(path, cdf: list[tuple[int, float]]) -> None:
    _write_csv(path, ["fct_ns", "fraction"], [[x, f"{f:.6f}"] for x, f in cdf])


def write_occupancy_csv(path, occupancy: OccupancyLog, num_windows: int) -> None:
    rows = []
    keys = sorted(occupancy.ports)
    for w in range(num_windows):
        for key in keys:
            p = occupancy.ports[key]
            rows.append([w, key[0], key[1], p.window_max(w), p.capacity])
    _write_csv(path, ["window", "switch", "port", "max_bytes", "capacity_bytes"], rows)


@dataclass
class SessionSummary:
    name: str
    execution_time_ns: int
    mean_fct_ns: int
    max_fct_ns: int
    messages: int


def write_summary_csv(path, summaries: Sequence[SessionSummary]) -> None:
    rows = [[s.execution_time_ns, s.mean_fct_ns, s.max_fct_ns, s.messages, s.name] for s in summaries]
    _write_csv(path, ["execution_time_ns", "mean_fct_ns", "max_fct_ns", "messages", "session"], rows)
