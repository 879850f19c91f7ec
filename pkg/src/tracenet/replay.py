"""Simulator-agnostic trace replay.

A :class:`Session` turns a trace into a stream of point-to-point messages.
The network backend pulls ready messages with :meth:`Session.next_ready_messages`
and reports progress through :meth:`Session.notify_send_complete` and
:meth:`Session.notify_delivered`; no other coupling exists between the two.
"""

from __future__ import annotations

import enum
import functools
import heapq
import operator
import random
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .trace import (
    CollKind,
    Communicator,
    DepKind,
    P2PSend,
    Trace,
    observing_ranks,
    owning_ranks,
)

PLAIN = "PLAIN"
REDUCE_PHASE = "REDUCE_PHASE"
BCAST_PHASE = "BCAST_PHASE"


_READY_ORDER = operator.attrgetter("gen_time", "record_id", "src_rank", "dst_rank")


class ReplayError(RuntimeError):
    pass


_ROOTLESS = (CollKind.ALLREDUCE, CollKind.BARRIER, CollKind.ALLGATHER, CollKind.ALLTOALL)


class Transfer(NamedTuple):
    src: int
    dst: int
    nbytes: int
    phase: str = PLAIN


def expand_collective(kind: CollKind, comm: Communicator, root_rank: int, s_b: int) -> list[Transfer]:
    """Point-to-point transfers of one collective under N-delivery.

    Transfers of a phase are in ascending (src, dst) order; for the two-phase
    kinds every REDUCE_PHASE transfer precedes every BCAST_PHASE transfer.
    """
    nbytes = wire_size(kind, s_b)
    return [Transfer(src, dst, nbytes, phase) for src, dst, phase in collective_pattern(kind, comm, root_rank)]


def wire_size(kind: CollKind, s_b: int) -> int:
    """Bytes carried by each transfer of a collective with buffer size ``s_b``."""
    return 0 if kind is CollKind.BARRIER else s_b


def collective_pattern(kind: CollKind, comm: Communicator, root_rank: int) -> tuple[tuple[int, int, str], ...]:
    """(src, dst, phase) of every transfer; independent of the message size, so memoized."""
    return _pattern(kind, comm, -1 if kind in _ROOTLESS else root_rank)


@functools.lru_cache(maxsize=4096)
def _pattern(kind, comm, root_rank):
    return tuple(_expand(kind, comm, root_rank))


class _Plan(NamedTuple):
    first: dict[int, tuple[tuple[int, int, str], ...]]  # non-broadcast-phase transfers by source rank
    bcast: tuple[tuple[int, int, str], ...]
    counts: dict[int, tuple[int, int, int]]  # rank -> (sends, recvs, reduce-phase recvs)


def _collective_plan(kind: CollKind, comm: Communicator, root_rank: int) -> _Plan:
    return _plan(kind, comm, -1 if kind in _ROOTLESS else root_rank)


@functools.lru_cache(maxsize=4096)
def _plan(kind: CollKind, comm: Communicator, root_rank: int) -> _Plan:
    first: dict[int, list] = {}
    bcast = []
    counts = {r: [0, 0, 0] for r in comm.ranks}
    for x in collective_pattern(kind, comm, root_rank):
        src, dst, phase = x
        if phase == BCAST_PHASE:
            bcast.append(x)
        else:
            first.setdefault(src, []).append(x)
        counts[src][0] += 1
        counts[dst][1] += 1
        if phase == REDUCE_PHASE:
            counts[dst][2] += 1
    return _Plan({r: tuple(v) for r, v in first.items()}, tuple(bcast), {r: tuple(c) for r, c in counts.items()})


def _expand(kind: CollKind, comm: Communicator, root_rank: int) -> list[tuple[int, int, str]]:
    """(src, dst, phase) triples in the order documented on :func:`expand_collective`."""
    if not isinstance(kind, CollKind):
        raise ValueError(f"unknown collective kind {kind!r}")
    ranks = comm.ranks
    if kind in (CollKind.ALLREDUCE, CollKind.BARRIER):
        root = ranks[0]
        others = sorted(r for r in ranks if r != root)
        return [(r, root, REDUCE_PHASE) for r in others] + [(root, r, BCAST_PHASE) for r in others]
    if kind in (CollKind.ALLGATHER, CollKind.ALLTOALL):
        order = sorted(ranks)
        return [(s, d, PLAIN) for s in order for d in order if s != d]
    if root_rank not in ranks:
        raise ValueError(f"root {root_rank} not in communicator {comm.comm_id}")
    others = sorted(r for r in ranks if r != root_rank)
    if kind in (CollKind.BROADCAST, CollKind.SCATTER):
        return [(root_rank, r, PLAIN) for r in others]
    # GATHER / REDUCE; ascending src already, dst fixed
    return [(r, root_rank, PLAIN) for r in others]


# --- task mapping ------------------------------------------------------------


class MappingPolicy(enum.Enum):
    LINEAR = "linear"
    RANDOM = "random"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class Mapping:
    policy: MappingPolicy
    task_to_node: tuple[int, ...]

    def __getitem__(self, task: int) -> int:
        return self.task_to_node[task]

    def __len__(self) -> int:
        return len(self.task_to_node)


def map_tasks(
    policy: MappingPolicy | str,
    num_tasks: int,
    node_ids: Sequence[int],
    seed: int = 0,
    table: Sequence[int] | dict[int, int] | None = None,
) -> Mapping:
    """Place tasks onto end nodes.

    RANDOM shuffles ``node_ids`` with :class:`random.Random` (Mersenne Twister,
    identical on every platform for a given seed) and assigns task i to the i-th
    shuffled node, wrapping when there are more tasks than nodes.
    """
    policy = MappingPolicy(policy)
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    nodes = list(node_ids)
    if not nodes:
        raise ValueError("node_ids must be non-empty")
    if policy is MappingPolicy.LINEAR:
        out = [nodes[i % len(nodes)] for i in range(num_tasks)]
    elif policy is MappingPolicy.RANDOM:
        shuffled = nodes[:]
        random.Random(seed).shuffle(shuffled)
        out = [shuffled[i % len(shuffled)] for i in range(num_tasks)]
    else:
        if table is None:
            raise ValueError("EXPLICIT mapping needs a table")
        if isinstance(table, dict):
            missing = [t for t in range(num_tasks) if t not in table]
            if missing:
                raise ValueError(f"explicit mapping misses tasks {missing[:8]}")
            out = [table[t] for t in range(num_tasks)]
        else:
            if len(table) < num_tasks:
                raise ValueError(f"explicit mapping has {len(table)} entries for {num_tasks} tasks")
            out = list(table[:num_tasks])
        known = set(nodes)
        bad = sorted({n for n in out if n not in known})
        if bad:
            raise ValueError(f"explicit mapping references unknown nodes {bad[:8]}")
    return Mapping(policy, tuple(out))


# --- session -----------------------------------------------------------------


class LegState(enum.IntEnum):
    BLOCKED = 0
    ELIGIBLE = 1
    ACTIVE = 2
    COMPLETE = 3


class Message:
    """One point-to-point message generated by the replay."""

    __slots__ = (
        "msg_id",
        "session_id",
        "record_id",
        "phase",
        "src_rank",
        "dst_rank",
        "src_node",
        "dst_node",
        "length_bytes",
        "gen_time",
        "is_self",
        "sent",
        "delivered",
        "net",
    )

    def __init__(self, msg_id, session_id, record_id, phase, src_rank, dst_rank, src_node, dst_node, length, gen_time):
        self.msg_id = msg_id
        self.session_id = session_id
        self.record_id = record_id
        self.phase = phase
        self.src_rank = src_rank
        self.dst_rank = dst_rank
        self.src_node = src_node
        self.dst_node = dst_node
        self.length_bytes = length
        self.gen_time = gen_time
        self.is_self = src_rank == dst_rank or src_node == dst_node
        self.sent: int | None = None
        self.delivered: int | None = None
        self.net = None  # backend scratch space

    def __repr__(self) -> str:
        return (
            f"Message(id={self.msg_id}, rec={self.record_id}, {self.src_rank}->{self.dst_rank}, "
            f"{self.length_bytes}B, t={self.gen_time}, {self.phase})"
        )


class _Leg:
    __slots__ = ("rid", "rank", "state", "eligible_at", "sends_left", "recvs_left", "reduce_left", "completed_at")

    def __init__(self, rid, rank, state, sends, recvs, reduce_left=0):
        self.rid = rid
        self.rank = rank
        self.state = state
        self.eligible_at: int | None = None
        self.sends_left = sends
        self.recvs_left = recvs
        self.reduce_left = reduce_left
        self.completed_at: int | None = None


class Session:
    """Replay state of one trace under one task mapping."""

    def __init__(self, trace: Trace, mapping: Mapping, session_id: int = 0, zero_latency: bool = False):
        """``zero_latency`` settles every message at its generation time, as on an
        ideal bus, instead of handing it to a backend."""
        if len(mapping) < trace.num_tasks:
            raise ValueError(f"mapping covers {len(mapping)} tasks, trace has {trace.num_tasks}")
        self.trace = trace
        self.mapping = mapping
        self._nodes = mapping.task_to_node
        self.session_id = session_id
        self._instant = zero_latency
        self.clock = 0
        self.messages: list[Message] = []
        self._next_id = 0
        self._outbox: list[Message] = []
        self._outstanding: dict[int, Message] = {}
        self._settled = 0
        self._heap: list[tuple[int, int, int]] = []
        self._legs: dict[tuple[int, int], _Leg] = {}
        self._transfers: dict[int, _Plan] = {}
        self._sizes: dict[int, int] = {}
        self._roots: dict[int, int] = {}  # two-phase collectives: rid -> reduce root
        self._waiters: dict[tuple[int, int], list[tuple[int, int]]] = {}
        self._remaining = 0
        self._elapsed = 0

        comms = trace.comm_table()
        by_id = {}
        for rec in trace.records:
            rid = rec.record_id
            by_id[rid] = rec
            b = rec.body
            if isinstance(b, P2PSend):
                s, d = b.src_rank, b.dst_rank
                self._transfers[rid] = _Plan({s: ((s, d, PLAIN),)}, (), {})
                self._sizes[rid] = b.size_bytes
                if s == d:
                    self._add_leg(rid, s, LegState.BLOCKED, 1, 1)
                else:
                    self._add_leg(rid, s, LegState.BLOCKED, 1, 0)
                    # receive side is never gated: it just waits for the data
                    self._add_leg(rid, d, LegState.ACTIVE, 0, 1)
            else:
                comm = comms[b.comm_id]
                plan = _collective_plan(b.kind, comm, b.root_rank)
                self._transfers[rid] = plan
                self._sizes[rid] = wire_size(b.kind, b.size_bytes)
                if b.kind in (CollKind.ALLREDUCE, CollKind.BARRIER):
                    self._roots[rid] = comm.ranks[0]
                for r in comm.ranks:
                    self._add_leg(rid, r, LegState.BLOCKED, *plan.counts[r])

            dep = rec.dep
            owners = owning_ranks(rec, comms)
            if dep.kind is DepKind.INIT:
                for r in owners:
                    self._make_eligible(self._legs[(rid, r)], dep.delay_ns)
            else:
                target = by_id.get(dep.target_record)
                if target is None:
                    continue  # dangling: leg stays blocked, replay reports the stall
                seen = observing_ranks(target, dep.kind, comms)
                for r in owners:
                    if r in seen:
                        self._waiters.setdefault((dep.target_record, r), []).append((rid, dep.delay_ns))

    def _add_leg(self, rid, rank, state, sends, recvs, reduce_left=0):
        self._legs[(rid, rank)] = _Leg(rid, rank, state, sends, recvs, reduce_left)
        self._remaining += 1

    def _make_eligible(self, leg: _Leg, at: int) -> None:
        leg.state = LegState.ELIGIBLE
        leg.eligible_at = at
        heapq.heappush(self._heap, (at, leg.rid, leg.rank))

    # -- queries ---------------------------------------------------------------

    def state(self, record_id: int, rank: int) -> LegState:
        return self._legs[(record_id, rank)].state

    def is_finished(self) -> bool:
        return self._remaining == 0

    def elapsed(self) -> int:
        """Latest completion timestamp of any record at any rank (0 if none)."""
        return self._elapsed

    def next_event_time(self) -> int | None:
        """Earliest time at which new messages may become ready, or None."""
        if self._outbox:
            return self.clock
        if self._heap:
            return max(self._heap[0][0], self.clock)
        return None

    def outstanding(self) -> int:
        return len(self._outstanding)

    def stalled(self) -> bool:
        return not self.is_finished() and not self._heap and not self._outbox and not self._outstanding

    def incomplete_records(self) -> list[int]:
        return sorted({leg.rid for leg in self._legs.values() if leg.state is not LegState.COMPLETE})

    @property
    def generated(self) -> int:
        return len(self.messages)

    @property
    def settled(self) -> int:
        return self._settled

    # -- backend contract ------------------------------------------------------

    def next_ready_messages(self, now: int) -> list[Message]:
        """Hand out every not-yet-returned network message generated at or before ``now``."""
        if now > self.clock:
            self.clock = now
        heap = self._heap
        while heap and heap[0][0] <= now:
            t, rid, rank = heapq.heappop(heap)
            self._activate(self._legs[(rid, rank)], t)
        if not self._outbox:
            return []
        out = sorted(self._outbox, key=_READY_ORDER)
        self._outbox = []
        for m in out:
            self._outstanding[m.msg_id] = m
        return out

    def notify_send_complete(self, msg_id: int, t: int) -> None:
        msg = self._claim(msg_id, t)
        if msg.sent is not None:
            raise ReplayError(f"message {msg_id} already send-complete")
        msg.sent = t
        self._send_done(msg, t)
        self._maybe_settle(msg)

    def notify_delivered(self, msg_id: int, t: int) -> None:
        msg = self._claim(msg_id, t)
        if msg.delivered is not None:
            raise ReplayError(f"message {msg_id} already delivered")
        msg.delivered = t
        self._recv_done(msg, t)
        self._maybe_settle(msg)

    def settle_instantly(self, msgs: list[Message], t: int) -> None:
        """Send-complete then deliver each message at ``t``, in list order.

        Same effect as calling both notifications per message; used by
        zero-latency backends where the bookkeeping cost dominates.
        """
        if t < self.clock:
            raise ReplayError(f"time regression: t={t} < clock {self.clock}")
        self.clock = t
        outstanding = self._outstanding
        legs = self._legs
        check = self._check
        for m in msgs:
            if outstanding.pop(m.msg_id, None) is None or m.sent is not None or m.delivered is not None:
                raise ReplayError(f"unknown or settled message {m.msg_id}")
            if t < m.gen_time:
                raise ReplayError(f"message {m.msg_id} settled before generation")
            m.sent = m.delivered = t
            rid = m.record_id
            leg = legs[(rid, m.src_rank)]
            leg.sends_left -= 1
            if not leg.sends_left and not leg.recvs_left:
                check(leg, t)
            if m.phase == REDUCE_PHASE:
                self._recv_done(m, t)
                continue
            leg = legs[(rid, m.dst_rank)]
            leg.recvs_left -= 1
            if not leg.recvs_left and not leg.sends_left:
                check(leg, t)
        self._settled += len(msgs)

    def _claim(self, msg_id: int, t: int) -> Message:
        msg = self._outstanding.get(msg_id)
        if msg is None:
            raise ReplayError(f"unknown or settled message {msg_id}")
        if t < self.clock or t < msg.gen_time:
            raise ReplayError(f"time regression: t={t} < clock {self.clock}")
        self.clock = t
        return msg

    def _maybe_settle(self, msg: Message) -> None:
        if msg.sent is not None and msg.delivered is not None:
            del self._outstanding[msg.msg_id]
            self._settled += 1

    # -- state machine -----------------------------------------------------------

    def _activate(self, leg: _Leg, t: int) -> None:
        leg.state = LegState.ACTIVE
        rid = leg.rid
        rank = leg.rank
        self._emit_all(rid, self._transfers[rid].first.get(rank, ()), t)
        if self._roots.get(rid) == rank and leg.reduce_left == 0:
            self._emit_bcast_phase(rid, t)
        self._check(leg, t)

    def _emit_bcast_phase(self, rid: int, t: int) -> None:
        self._emit_all(rid, self._transfers[rid].bcast, t)

    def _emit_all(self, rid: int, xfers, t: int) -> None:
        nodes = self._nodes
        sid = self.session_id
        messages = self.messages
        outbox = self._outbox
        instant = self._instant
        legs = self._legs
        nbytes = self._sizes[rid]
        for src, dst, phase in xfers:
            m = Message(self._next_id, sid, rid, phase, src, dst, nodes[src], nodes[dst], nbytes, t)
            self._next_id += 1
            messages.append(m)
            if not (instant or m.is_self):
                outbox.append(m)
                continue
            m.sent = m.delivered = t
            self._settled += 1
            leg = legs[(rid, src)]
            leg.sends_left -= 1
            if not leg.sends_left and not leg.recvs_left:
                self._check(leg, t)
            if phase == REDUCE_PHASE:
                self._recv_done(m, t)
                continue
            leg = legs[(rid, dst)]
            leg.recvs_left -= 1
            if not leg.recvs_left and not leg.sends_left:
                self._check(leg, t)

    def _send_done(self, msg: Message, t: int) -> None:
        leg = self._legs[(msg.record_id, msg.src_rank)]
        leg.sends_left -= 1
        self._check(leg, t)

    def _recv_done(self, msg: Message, t: int) -> None:
        leg = self._legs[(msg.record_id, msg.dst_rank)]
        leg.recvs_left -= 1
        if msg.phase == REDUCE_PHASE:
            leg.reduce_left -= 1
            if leg.reduce_left == 0 and leg.state is LegState.ACTIVE:
                self._emit_bcast_phase(msg.record_id, t)
        self._check(leg, t)

    def _check(self, leg: _Leg, t: int) -> None:
        if leg.state is not LegState.ACTIVE or leg.sends_left or leg.recvs_left:
            return
        leg.state = LegState.COMPLETE
        leg.completed_at = t
        self._remaining -= 1
        if t > self._elapsed:
            self._elapsed = t
        for dep_rid, delay in self._waiters.get((leg.rid, leg.rank), ()):
            self._make_eligible(self._legs[(dep_rid, leg.rank)], t + delay)


def init_session(trace: Trace, mapping: Mapping, session_id: int = 0) -> Session:
    return Session(trace, mapping, session_id)
