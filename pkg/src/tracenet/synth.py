"""Synthetic traces: incast bursts, uniform background load, random valid traces."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .replay import Mapping, MappingPolicy, Session, map_tasks
from .trace import (
    CollKind,
    Collective,
    Communicator,
    Dependency,
    DepKind,
    P2PSend,
    Trace,
    TraceRecord,
)

MIB = 1 << 20


@dataclass(frozen=True)
class IncastSpec:
    num_sources: int = 64
    dst_node: int = 0
    message_bytes: int = 10 * MIB
    start_time_ns: int = 0
    sources: tuple[int, ...] | None = None
    seed: int = 0

    def source_nodes(self, num_nodes: int) -> tuple[int, ...]:
        """Explicit sources, or ``num_sources`` seeded-random distinct nodes != dst."""
        if self.sources is not None:
            return tuple(self.sources)
        pool = [n for n in range(num_nodes) if n != self.dst_node]
        if self.num_sources > len(pool):
            raise ValueError(f"{self.num_sources} sources requested, only {len(pool)} nodes available")
        return tuple(sorted(random.Random(self.seed).sample(pool, self.num_sources)))

    def validate(self) -> None:
        if self.num_sources < 1:
            raise ValueError("num_sources must be >= 1")
        if self.message_bytes < 0 or self.start_time_ns < 0:
            raise ValueError("message size and start time must be non-negative")
        if self.sources is not None:
            if len(self.sources) != self.num_sources:
                raise ValueError("explicit source list length differs from num_sources")
            if len(set(self.sources)) != len(self.sources):
                raise ValueError("incast sources must be distinct")
            if self.dst_node in self.sources:
                raise ValueError("incast destination cannot be a source")


def parse_incast(text: str) -> IncastSpec:
    """Parse ``sources=64,bytes=10485760,dst=0,at=T[,seed=1]``; ``at`` is mandatory."""
    keys = {"sources": "num_sources", "bytes": "message_bytes", "dst": "dst_node", "at": "start_time_ns", "seed": "seed"}
    kw = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in item:
            raise ValueError(f"bad incast item {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in keys:
            raise ValueError(f"unknown incast key {k!r}")
        kw[keys[k]] = int(v)
    if "start_time_ns" not in kw:
        raise ValueError("incast spec needs an explicit injection time at=T (ns)")
    spec = IncastSpec(**kw)
    spec.validate()
    return spec


def synth_incast(spec: IncastSpec) -> Trace:
    """Tasks 0..k-1 each send one message to task k, all at ``start_time_ns``."""
    spec.validate()
    k = spec.num_sources
    records = [
        TraceRecord(i, P2PSend(i, k, spec.message_bytes), Dependency(DepKind.INIT, None, spec.start_time_ns))
        for i in range(k)
    ]
    return Trace.build(k + 1, [], records)


def incast_mapping(spec: IncastSpec, num_nodes: int) -> Mapping:
    nodes = spec.source_nodes(num_nodes)
    if spec.dst_node in nodes or not 0 <= spec.dst_node < num_nodes:
        raise ValueError("incast destination must be a valid node outside the source set")
    return map_tasks(MappingPolicy.EXPLICIT, spec.num_sources + 1, range(num_nodes), table=[*nodes, spec.dst_node])


def overlay_sessions(primary: Session, overlay: Session) -> list[Session]:
    """Sessions to be driven together, in merge order (primary first).

    The fabric draws ready messages from each session in this order at every
    instant, so injection is ordered by (time, session id, msg id).
    """
    if overlay.session_id == primary.session_id:
        raise ValueError("overlay needs a distinct session id")
    return sorted([primary, overlay], key=lambda s: s.session_id)


def uniform_background(
    num_tasks: int,
    messages_per_task: int,
    message_bytes: int,
    mean_gap_ns: int,
    seed: int = 0,
) -> Trace:
    """Closed-loop uniform random traffic.

    Every task runs a chain of sends to uniformly chosen other tasks; each send
    starts an exponentially distributed think time after the previous one left
    the NIC.
    """
    rng = random.Random(seed)
    last: dict[int, int] = {}
    records = []
    rid = 0
    for _ in range(messages_per_task):
        for src in range(num_tasks):
            dst = rng.randrange(num_tasks - 1)
            dst += dst >= src
            gap = int(rng.expovariate(1.0 / mean_gap_ns)) if mean_gap_ns else 0
            if src in last:
                dep = Dependency(DepKind.AFTER_SEND, last[src], gap)
            else:
                dep = Dependency(DepKind.INIT, None, gap)
            records.append(TraceRecord(rid, P2PSend(src, dst, message_bytes), dep))
            last[src] = rid
            rid += 1
    return Trace.build(num_tasks, [], records)


def delay_chain(num_tasks: int, hops: int, message_bytes: int, delay_ns: int) -> Trace:
    """A ring of receive-triggered sends, each after ``delay_ns`` of compute."""
    records = []
    for i in range(hops):
        src, dst = i % num_tasks, (i + 1) % num_tasks
        dep = Dependency(DepKind.INIT, None, delay_ns) if i == 0 else Dependency(DepKind.AFTER_RECV, i - 1, delay_ns)
        records.append(TraceRecord(i, P2PSend(src, dst, message_bytes), dep))
    return Trace.build(num_tasks, [], records)


_COLL_KINDS = list(CollKind)


def random_trace(
    rng: random.Random,
    max_tasks: int = 64,
    max_records: int = 500,
    max_bytes: int = 1 << 16,
    collective_prob: float = 0.15,
    max_delay_ns: int = 10_000,
) -> Trace:
    """A random trace satisfying every structural rule, including observability.

    Dependencies only target records whose completion is visible to every
    owning rank of the new record, so replay never stalls.
    """
    n = rng.randint(1, max_tasks)
    comms = [Communicator(0, tuple(range(n)))]
    for cid in range(1, rng.randint(1, 4)):
        size = rng.randint(1, n)
        comms.append(Communicator(cid, tuple(rng.sample(range(n), size))))
    seen_at: dict[int, list[tuple[int, DepKind]]] = {r: [] for r in range(n)}
    by_comm: dict[int, list[int]] = {c.comm_id: [] for c in comms}
    records = []
    for rid in range(rng.randint(0, max_records)):
        delay = rng.randint(0, max_delay_ns)
        if rng.random() < collective_prob:
            comm = rng.choice(comms)
            kind = rng.choice(_COLL_KINDS)
            size = 0 if kind is CollKind.BARRIER else rng.randint(0, max_bytes)
            body = Collective(comm.comm_id, kind, rng.choice(comm.ranks), size)
            prior = by_comm[comm.comm_id]
            if prior and rng.random() < 0.8:
                dep = Dependency(rng.choice((DepKind.AFTER_SEND, DepKind.AFTER_RECV)), rng.choice(prior), delay)
            else:
                dep = Dependency(DepKind.INIT, None, delay)
            for r in comm.ranks:
                seen_at[r].append((rid, DepKind.AFTER_SEND))
            by_comm[comm.comm_id].append(rid)
        else:
            src = rng.randrange(n)
            dst = src if rng.random() < 0.1 else rng.randrange(n)
            body = P2PSend(src, dst, rng.randint(0, max_bytes))
            options = seen_at[src]
            if options and rng.random() < 0.8:
                target, kind = rng.choice(options[-20:])
                dep = Dependency(kind, target, delay)
            else:
                dep = Dependency(DepKind.INIT, None, delay)
            seen_at[src].append((rid, DepKind.AFTER_SEND))
            seen_at[dst].append((rid, DepKind.AFTER_RECV))
        records.append(TraceRecord(rid, body, dep))
    return Trace.build(n, comms, records)
