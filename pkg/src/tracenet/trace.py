"""Line-oriented communication trace format.

A trace file looks like::

    VEFT 1 4 1 3
    COMM 0 4 0 1 2 3
    SEND 0 0 1 4096 I 0
    SEND 1 1 2 4096 R 0 100
    COLL 2 0 BCAST 2 1024 S 0 50

Records carry one dependency on an earlier record plus a relative delay in
nanoseconds; there are no absolute timestamps anywhere in the format.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, TextIO

FORMAT_VERSION = 1


class DepKind(enum.Enum):
    INIT = "I"
    AFTER_SEND = "S"
    AFTER_RECV = "R"


class CollKind(enum.Enum):
    BROADCAST = "BCAST"
    SCATTER = "SCATTER"
    GATHER = "GATHER"
    REDUCE = "REDUCE"
    ALLREDUCE = "ALLREDUCE"
    ALLGATHER = "ALLGATHER"
    ALLTOALL = "ALLTOALL"
    BARRIER = "BARRIER"


# Display order for per-operation statistics; P2P is not a collective kind.
OP_KINDS = ("P2P",) + tuple(k.value for k in CollKind)


class TraceError(ValueError):
    """A trace violates one of the format invariants."""


class TraceParseError(TraceError):
    def __init__(self, line: int, column: int, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


@dataclass(frozen=True)
class TraceHeader:
    version: int
    num_tasks: int
    num_comms: int
    num_records: int


@dataclass(frozen=True)
class Communicator:
    comm_id: int
    ranks: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.ranks)


@dataclass(frozen=True)
class Dependency:
    kind: DepKind = DepKind.INIT
    target_record: int | None = None
    delay_ns: int = 0


@dataclass(frozen=True)
class P2PSend:
    src_rank: int
    dst_rank: int
    size_bytes: int

    @property
    def op_name(self) -> str:
        return "P2P"


@dataclass(frozen=True)
class Collective:
    comm_id: int
    kind: CollKind
    root_rank: int
    size_bytes: int

    @property
    def op_name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class TraceRecord:
    record_id: int
    body: P2PSend | Collective
    dep: Dependency = field(default_factory=Dependency)


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    comms: tuple[Communicator, ...]
    records: tuple[TraceRecord, ...]

    @classmethod
    def build(cls, num_tasks: int, comms: Iterable[Communicator], records: Iterable[TraceRecord]) -> "Trace":
        """Assemble a trace and derive the header counts from the contents."""
        comms = tuple(comms)
        records = tuple(records)
        return cls(TraceHeader(FORMAT_VERSION, num_tasks, len(comms), len(records)), comms, records)

    @property
    def num_tasks(self) -> int:
        return self.header.num_tasks

    def comm(self, comm_id: int) -> Communicator:
        for c in self.comms:
            if c.comm_id == comm_id:
                return c
        raise KeyError(comm_id)

    def comm_table(self) -> dict[int, Communicator]:
        return {c.comm_id: c for c in self.comms}


def check_invariants(t: Trace) -> None:
    """Raise TraceError on the first invariant violation found in ``t``."""
    h = t.header
    if h.version != FORMAT_VERSION:
        raise TraceError(f"unsupported version {h.version}")
    if h.num_tasks < 1:
        raise TraceError("num_tasks must be >= 1")
    if h.num_comms != len(t.comms):
        raise TraceError(f"header declares {h.num_comms} communicators, found {len(t.comms)}")
    if h.num_records != len(t.records):
        raise TraceError(f"header declares {h.num_records} records, found {len(t.records)}")
    comms: dict[int, Communicator] = {}
    for c in t.comms:
        if c.comm_id in comms:
            raise TraceError(f"duplicate comm_id {c.comm_id}")
        if not c.ranks:
            raise TraceError(f"communicator {c.comm_id} is empty")
        if len(set(c.ranks)) != len(c.ranks):
            raise TraceError(f"communicator {c.comm_id} repeats a rank")
        for r in c.ranks:
            if not 0 <= r < h.num_tasks:
                raise TraceError(f"communicator {c.comm_id}: rank {r} out of range")
        comms[c.comm_id] = c
    prev = -1
    for rec in t.records:
        _check_record(rec, prev, comms, h.num_tasks)
        prev = rec.record_id


def _check_record(rec: TraceRecord, prev_id: int, comms: dict[int, Communicator], num_tasks: int) -> None:
    rid = rec.record_id
    if rid <= prev_id:
        raise TraceError(f"record {rid}: ids must be strictly increasing")
    body = rec.body
    if body.size_bytes < 0:
        raise TraceError(f"record {rid}: negative size")
    if isinstance(body, P2PSend):
        for r in (body.src_rank, body.dst_rank):
            if not 0 <= r < num_tasks:
                raise TraceError(f"record {rid}: rank {r} out of range")
    else:
        if body.comm_id not in comms:
            raise TraceError(f"record {rid}: unknown comm_id {body.comm_id}")
        if body.root_rank not in comms[body.comm_id].ranks:
            raise TraceError(f"record {rid}: root {body.root_rank} not in communicator {body.comm_id}")
        if body.kind is CollKind.BARRIER and body.size_bytes != 0:
            raise TraceError(f"record {rid}: BARRIER must carry 0 bytes")
    dep = rec.dep
    if dep.delay_ns < 0:
        raise TraceError(f"record {rid}: negative delay")
    if dep.kind is DepKind.INIT:
        if dep.target_record is not None:
            raise TraceError(f"record {rid}: INIT dependency with a target")
    elif dep.target_record is None or dep.target_record >= rid:
        raise TraceError(f"record {rid}: dependency must target an earlier record")


# --- parsing -----------------------------------------------------------------


class _Tokens:
    """Token cursor over one line that remembers 1-based columns."""

    def __init__(self, lineno: int, text: str):
        self.lineno = lineno
        self.items: list[tuple[int, str]] = []
        col = 0
        for piece in text.split():
            col = text.index(piece, col)
            self.items.append((col + 1, piece))
            col += len(piece)
        self.pos = 0
        self.end_col = len(text) + 1

    def fail(self, reason: str, at: int | None = None) -> TraceParseError:
        idx = self.pos if at is None else at
        col = self.items[idx][0] if idx < len(self.items) else self.end_col
        return TraceParseError(self.lineno, col, reason)

    def word(self) -> str:
        if self.pos >= len(self.items):
            raise self.fail("unexpected end of line")
        tok = self.items[self.pos][1]
        self.pos += 1
        return tok

    def integer(self, what: str, minimum: int = 0) -> int:
        tok = self.word()
        if not (tok.isascii() and tok.isdigit()):
            raise self.fail(f"expected non-negative integer {what}, got {tok!r}", self.pos - 1)
        val = int(tok)
        if val < minimum:
            raise self.fail(f"{what} must be >= {minimum}", self.pos - 1)
        return val

    def finish(self) -> None:
        if self.pos != len(self.items):
            raise self.fail(f"trailing token {self.items[self.pos][1]!r}")


_COLL_BY_TOKEN = {k.value: k for k in CollKind}


def parse_trace(stream: TextIO | str) -> Trace:
    """Parse a trace from a text stream (or a string holding the file contents)."""
    text = stream if isinstance(stream, str) else stream.read()
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if body.strip():
            lines.append(_Tokens(lineno, body))
    if not lines:
        raise TraceParseError(1, 1, "empty trace: missing VEFT header")

    hdr = lines[0]
    if hdr.word() != "VEFT":
        raise hdr.fail("expected 'VEFT' header", 0)
    version = hdr.integer("version")
    if version != FORMAT_VERSION:
        raise hdr.fail(f"unsupported version {version}", 1)
    num_tasks = hdr.integer("num_tasks", minimum=1)
    num_comms = hdr.integer("num_comms")
    num_records = hdr.integer("num_records")
    hdr.finish()

    body_lines = lines[1:]
    if len(body_lines) != num_comms + num_records:
        last = body_lines[-1].lineno if body_lines else hdr.lineno
        raise TraceParseError(
            last, 1, f"header declares {num_comms} comms + {num_records} records, file has {len(body_lines)} lines"
        )

    comms: dict[int, Communicator] = {}
    for toks in body_lines[:num_comms]:
        if toks.word() != "COMM":
            raise toks.fail("expected COMM line", 0)
        comm_id = toks.integer("comm_id")
        if comm_id in comms:
            raise toks.fail(f"duplicate comm_id {comm_id}", 1)
        size = toks.integer("size", minimum=1)
        ranks = []
        for _ in range(size):
            r = toks.integer("rank")
            if r >= num_tasks:
                raise toks.fail(f"rank {r} out of range", toks.pos - 1)
            if r in ranks:
                raise toks.fail(f"rank {r} repeated", toks.pos - 1)
            ranks.append(r)
        toks.finish()
        comms[comm_id] = Communicator(comm_id, tuple(ranks))

    records: list[TraceRecord] = []
    seen: set[int] = set()
    prev = -1
    for toks in body_lines[num_comms:]:
        rec = _parse_record(toks, num_tasks, comms, prev, seen)
        records.append(rec)
        seen.add(rec.record_id)
        prev = rec.record_id

    return Trace(TraceHeader(version, num_tasks, num_comms, num_records), tuple(comms.values()), tuple(records))


def _parse_record(
    toks: _Tokens, num_tasks: int, comms: dict[int, Communicator], prev: int, seen: set[int]
) -> TraceRecord:
    tag = toks.word()
    rid = toks.integer("record_id")
    if rid <= prev:
        raise toks.fail(f"record_id {rid} not greater than previous {prev}", 1)
    if tag == "SEND":
        src = toks.integer("src")
        dst = toks.integer("dst")
        for i, r in ((2, src), (3, dst)):
            if r >= num_tasks:
                raise toks.fail(f"rank {r} out of range", i)
        size = toks.integer("bytes")
        body: P2PSend | Collective = P2PSend(src, dst, size)
    elif tag == "COLL":
        comm_id = toks.integer("comm_id")
        if comm_id not in comms:
            raise toks.fail(f"unknown comm_id {comm_id}", 2)
        kind_tok = toks.word()
        if kind_tok not in _COLL_BY_TOKEN:
            raise toks.fail(f"unknown collective kind {kind_tok!r}", 3)
        kind = _COLL_BY_TOKEN[kind_tok]
        root = toks.integer("root_rank")
        if root not in comms[comm_id].ranks:
            raise toks.fail(f"root {root} not in communicator {comm_id}", 4)
        size = toks.integer("bytes")
        if kind is CollKind.BARRIER and size != 0:
            raise toks.fail("BARRIER must carry 0 bytes", 5)
        body = Collective(comm_id, kind, root, size)
    else:
        raise toks.fail(f"unknown record type {tag!r}", 0)

    dep_pos = toks.pos
    dep_tok = toks.word()
    if dep_tok == "I":
        dep_kind, target = DepKind.INIT, None
    elif dep_tok in ("S", "R"):
        dep_kind = DepKind(dep_tok)
        target = toks.integer("target_record")
        if target >= rid:
            reason = "self dependency" if target == rid else "forward dependency"
            raise toks.fail(f"{reason} on record {target}", toks.pos - 1)
        if target not in seen:
            raise toks.fail(f"dangling target record {target}", toks.pos - 1)
    else:
        raise toks.fail(f"unknown dependency {dep_tok!r}", dep_pos)
    delay = toks.integer("delay_ns")
    toks.finish()
    return TraceRecord(rid, body, Dependency(dep_kind, target, delay))


def load_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


# --- writing -----------------------------------------------------------------


def _dep_tokens(dep: Dependency) -> str:
    if dep.kind is DepKind.INIT:
        return f"I {dep.delay_ns}"
    return f"{dep.kind.value} {dep.target_record} {dep.delay_ns}"


def write_trace(t: Trace) -> str:
    """Canonical text for ``t``; raises TraceError if ``t`` is not a valid trace."""
    check_invariants(t)
    out = [f"VEFT {t.header.version} {t.header.num_tasks} {t.header.num_comms} {t.header.num_records}"]
    for c in t.comms:
        out.append(" ".join(["COMM", str(c.comm_id), str(c.size), *map(str, c.ranks)]))
    for rec in t.records:
        b = rec.body
        if isinstance(b, P2PSend):
            head = f"SEND {rec.record_id} {b.src_rank} {b.dst_rank} {b.size_bytes}"
        else:
            head = f"COLL {rec.record_id} {b.comm_id} {b.kind.value} {b.root_rank} {b.size_bytes}"
        out.append(f"{head} {_dep_tokens(rec.dep)}")
    return "\n".join(out) + "\n"


def save_trace(t: Trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_trace(t))


# --- structural validation ---------------------------------------------------


@dataclass(frozen=True)
class Finding:
    record_id: int | None
    message: str

    def __str__(self) -> str:
        where = "trace" if self.record_id is None else f"record {self.record_id}"
        return f"{where}: {self.message}"


def owning_ranks(rec: TraceRecord, comms: dict[int, Communicator]) -> tuple[int, ...]:
    """Ranks whose start of ``rec`` is gated by its dependency."""
    if isinstance(rec.body, P2PSend):
        return (rec.body.src_rank,)
    return comms[rec.body.comm_id].ranks


def observing_ranks(target: TraceRecord, kind: DepKind, comms: dict[int, Communicator]) -> frozenset[int]:
    """Ranks at which completion of ``target`` (send or receive side) is visible.

    For point-to-point targets AFTER_SEND is seen by the sender and AFTER_RECV
    by the receiver. A collective completes locally at every member, and both
    dependency kinds refer to that local completion.
    """
    b = target.body
    if isinstance(b, P2PSend):
        return frozenset((b.src_rank,) if kind is DepKind.AFTER_SEND else (b.dst_rank,))
    return frozenset(comms[b.comm_id].ranks)


def validate_structure(t: Trace) -> list[Finding]:
    findings: list[Finding] = []
    h = t.header
    if h.num_comms != len(t.comms):
        findings.append(Finding(None, f"header declares {h.num_comms} communicators, found {len(t.comms)}"))
    if h.num_records != len(t.records):
        findings.append(Finding(None, f"header declares {h.num_records} records, found {len(t.records)}"))
    comms = {}
    for c in t.comms:
        if c.comm_id in comms:
            findings.append(Finding(None, f"duplicate comm_id {c.comm_id}"))
        if any(not 0 <= r < h.num_tasks for r in c.ranks):
            findings.append(Finding(None, f"communicator {c.comm_id} has a rank out of range"))
        comms[c.comm_id] = c

    by_id: dict[int, TraceRecord] = {}
    prev = -1
    for rec in t.records:
        rid = rec.record_id
        if rid <= prev:
            findings.append(Finding(rid, "record ids not strictly increasing"))
        prev = max(prev, rid)
        b = rec.body
        usable = True
        if isinstance(b, P2PSend):
            if not (0 <= b.src_rank < h.num_tasks and 0 <= b.dst_rank < h.num_tasks):
                findings.append(Finding(rid, "rank out of range"))
                usable = False
        elif b.comm_id not in comms:
            findings.append(Finding(rid, f"dangling comm_id {b.comm_id}"))
            usable = False
        elif b.root_rank not in comms[b.comm_id].ranks:
            findings.append(Finding(rid, "root not in communicator"))
        if b.size_bytes < 0:
            findings.append(Finding(rid, "negative size"))
        if isinstance(b, Collective) and b.kind is CollKind.BARRIER and b.size_bytes != 0:
            findings.append(Finding(rid, "BARRIER with non-zero size"))

        dep = rec.dep
        if dep.delay_ns < 0:
            findings.append(Finding(rid, "negative delay"))
        if dep.kind is not DepKind.INIT:
            tgt = dep.target_record
            if tgt is None:
                findings.append(Finding(rid, "dependency without target"))
            elif tgt >= rid:
                findings.append(Finding(rid, "forward dependency" if tgt > rid else "self dependency"))
            elif tgt not in by_id:
                findings.append(Finding(rid, f"dangling target record {tgt}"))
            elif usable:
                seen = observing_ranks(by_id[tgt], dep.kind, comms)
                blind = [r for r in owning_ranks(rec, comms) if r not in seen]
                if blind:
                    findings.append(
                        Finding(rid, f"dependency not observable at owning task(s) {', '.join(map(str, blind))}")
                    )
        if usable:
            by_id[rid] = rec
    return findings
