"""Offline characterization of a trace: ideal-bus replay and traffic accounting."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .replay import MappingPolicy, Message, Session, collective_pattern, map_tasks, wire_size
from .svg import bar_chart, matrix_heatmap
from .trace import OP_KINDS, Finding, P2PSend, Trace

MIN_BIN_NS = 1_000_000


@dataclass
class IdealReplay:
    messages: list[Message]
    duration_ns: int
    findings: list[Finding]
    session: Session

    @property
    def generation_times(self) -> list[int]:
        return [m.gen_time for m in self.messages]



def ideal_replay(trace: Trace) -> IdealReplay:
    """Replay on a bus with infinite bandwidth: delivery happens at generation time.

    Tasks are mapped one per node so only rank-level self-messages bypass the bus.
    """
    findings: list[Finding] = []
    h = trace.header
    if h.num_records != len(trace.records):
        findings.append(Finding(None, f"header declares {h.num_records} records, found {len(trace.records)}"))
    if h.num_comms != len(trace.comms):
        findings.append(Finding(None, f"header declares {h.num_comms} communicators, found {len(trace.comms)}"))
    mapping = map_tasks(MappingPolicy.LINEAR, trace.num_tasks, range(trace.num_tasks))
    s = Session(trace, mapping, zero_latency=True)
    while True:
        t = s.next_event_time()
        if t is None:
            break
        # activation settles every message on the spot; nothing reaches the outbox
        assert not s.next_ready_messages(t)
    if not s.is_finished():
        for rid in s.incomplete_records()[:1]:
            findings.append(Finding(rid, f"replay stalled at record {rid}"))
    return IdealReplay(s.messages, s.elapsed(), findings, s)


@dataclass
class OpStats:
    calls: dict[str, int] = field(default_factory=dict)
    buffer_bytes: dict[str, int] = field(default_factory=dict)
    wire_messages: dict[str, int] = field(default_factory=dict)
    wire_bytes: dict[str, int] = field(default_factory=dict)

    def kinds(self) -> list[str]:
        return [k for k in OP_KINDS if self.calls.get(k, 0)]

    @property
    def total_wire_messages(self) -> int:
        return sum(self.wire_messages.values())

    @property
    def total_wire_bytes(self) -> int:
        return sum(self.wire_bytes.values())


def _wire_transfers(trace: Trace):
    """(record, op name, (src, dst, phase) transfers, bytes per transfer) in record order."""
    comms = trace.comm_table()
    for rec in trace.records:
        b = rec.body
        if isinstance(b, P2PSend):
            yield rec, "P2P", ((b.src_rank, b.dst_rank, None),), b.size_bytes
        else:
            yield rec, b.op_name, collective_pattern(b.kind, comms[b.comm_id], b.root_rank), wire_size(b.kind, b.size_bytes)


def count_by_operation(trace: Trace) -> OpStats:
    st = OpStats()
    for rec, op, xs, nbytes in _wire_transfers(trace):
        st.calls[op] = st.calls.get(op, 0) + 1
        st.buffer_bytes[op] = st.buffer_bytes.get(op, 0) + rec.body.size_bytes
        st.wire_messages[op] = st.wire_messages.get(op, 0) + len(xs)
        st.wire_bytes[op] = st.wire_bytes.get(op, 0) + len(xs) * nbytes
    return st


@dataclass
class TimeSeries:
    bin_width_ns: int
    num_bins: int
    messages: dict[str, np.ndarray]
    bytes: dict[str, np.ndarray]

    def total_messages(self) -> int:
        return int(sum(v.sum() for v in self.messages.values()))

    def total_bytes(self) -> int:
        return int(sum(v.sum() for v in self.bytes.values()))


def default_bin_width(duration_ns: int) -> int:
    return max(duration_ns // 100, MIN_BIN_NS)


def time_series(trace: Trace, bin_width_ns: int | None = None, replay: IdealReplay | None = None) -> TimeSeries:
    replay = replay or ideal_replay(trace)
    if bin_width_ns is None:
        bin_width_ns = default_bin_width(replay.duration_ns)
    if bin_width_ns <= 0:
        raise ValueError("bin_width_ns must be positive")
    ops = {rec.record_id: rec.body.op_name for rec in trace.records}
    last = max((m.gen_time for m in replay.messages), default=0)
    nbins = last // bin_width_ns + 1
    names = sorted(set(ops.values()))
    code = {rid: names.index(op) for rid, op in ops.items()}
    msgs_list = replay.messages
    kinds = np.fromiter((code[m.record_id] for m in msgs_list), dtype=np.int64, count=len(msgs_list))
    bins = np.fromiter((m.gen_time for m in msgs_list), dtype=np.int64, count=len(msgs_list)) // bin_width_ns
    sizes = np.fromiter((m.length_bytes for m in msgs_list), dtype=np.int64, count=len(msgs_list))
    msgs: dict[str, np.ndarray] = {}
    byts: dict[str, np.ndarray] = {}
    for k in np.unique(kinds):
        sel = kinds == k
        op = names[int(k)]
        msgs[op] = np.bincount(bins[sel], minlength=nbins).astype(np.int64)
        byts[op] = np.zeros(nbins, dtype=np.int64)
        np.add.at(byts[op], bins[sel], sizes[sel])
    return TimeSeries(bin_width_ns, nbins, msgs, byts)


@dataclass
class TrafficMatrix:
    messages: np.ndarray
    bytes: np.ndarray


def traffic_matrix(trace: Trace) -> TrafficMatrix:
    n = trace.num_tasks
    cells: list[int] = []
    sizes: list[int] = []
    for _, _, xs, nbytes in _wire_transfers(trace):
        cells.extend(s * n + d for s, d, _ in xs)
        sizes.extend([nbytes] * len(xs))
    idx = np.asarray(cells, dtype=np.int64)
    msgs = np.bincount(idx, minlength=n * n).astype(np.int64).reshape(n, n)
    byts = np.zeros(n * n, dtype=np.int64)
    np.add.at(byts, idx, np.asarray(sizes, dtype=np.int64))
    byts = byts.reshape(n, n)
    return TrafficMatrix(msgs, byts)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(opstats: OpStats, series: TimeSeries, matrix: TrafficMatrix, out_dir) -> list[str]:
    """Write the CSV + SVG report bundle; returns the written file names."""
    os.makedirs(out_dir, exist_ok=True)
    p = lambda name: os.path.join(out_dir, name)  # noqa: E731
    kinds = opstats.kinds()
    _write_csv(
        p("ops.csv"),
        ["kind", "calls", "buffer_bytes", "wire_messages", "wire_bytes"],
        [[k, opstats.calls[k], opstats.buffer_bytes[k], opstats.wire_messages[k], opstats.wire_bytes[k]] for k in kinds],
    )
    rows = []
    series_kinds = [k for k in OP_KINDS if k in series.messages]
    for b in range(series.num_bins):
        for k in series_kinds:
            n = int(series.messages[k][b])
            if n:
                rows.append([b * series.bin_width_ns, k, n, int(series.bytes[k][b])])
    _write_csv(p("timeseries.csv"), ["bin_start_ns", "kind", "messages", "bytes"], rows)
    n = matrix.messages.shape[0]
    for name, mat in (("matrix_messages.csv", matrix.messages), ("matrix_bytes.csv", matrix.bytes)):
        _write_csv(p(name), ["src", *range(n)], [[i, *map(int, mat[i])] for i in range(n)])

    bar_chart(kinds, [opstats.calls[k] for k in kinds], "Calls per operation", "calls").save(p("ops_calls.svg"))
    bar_chart(kinds, [opstats.wire_bytes[k] for k in kinds], "Wire bytes per operation", "bytes").save(
        p("ops_wire_bytes.svg")
    )
    matrix_heatmap(matrix.messages.tolist(), "Exchanged messages").save(p("matrix_messages.svg"))
    matrix_heatmap(matrix.bytes.tolist(), "Exchanged bytes").save(p("matrix_bytes.svg"))
    return sorted(
        [
            "ops.csv", "timeseries.csv", "matrix_messages.csv", "matrix_bytes.csv",
            "ops_calls.svg", "ops_wire_bytes.svg", "matrix_messages.svg", "matrix_bytes.svg",
        ]
    )
