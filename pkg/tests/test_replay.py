import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import runnable_traces
from tracenet.replay import (
    BCAST_PHASE,
    PLAIN,
    REDUCE_PHASE,
    LegState,
    MappingPolicy,
    ReplayError,
    Session,
    expand_collective,
    init_session,
    map_tasks,
)
from tracenet.trace import (
    CollKind,
    Collective,
    Communicator,
    Dependency,
    DepKind,
    P2PSend,
    Trace,
    TraceRecord,
    parse_trace,
)

INIT0 = Dependency(DepKind.INIT, None, 0)


def linear(n):
    return map_tasks(MappingPolicy.LINEAR, n, range(n))


# --- expansion ----------------------------------------------------------------


def brute_force_pairs(kind, ranks, root):
    """Enumerate comm x comm and keep the pairs each kind's definition names."""
    pairs = []
    first = ranks[0]
    for s, d in itertools.product(ranks, ranks):
        if s == d:
            continue
        if kind in (CollKind.BROADCAST, CollKind.SCATTER) and s == root:
            pairs.append((s, d))
        elif kind in (CollKind.GATHER, CollKind.REDUCE) and d == root:
            pairs.append((s, d))
        elif kind in (CollKind.ALLGATHER, CollKind.ALLTOALL):
            pairs.append((s, d))
        elif kind in (CollKind.ALLREDUCE, CollKind.BARRIER) and (d == first or s == first):
            pairs.append((s, d))
    return sorted(pairs)


@pytest.mark.parametrize("kind", list(CollKind))
def test_expansion_matches_brute_force(kind):
    rng = random.Random(kind.value)
    for n in range(1, 17):
        ranks = tuple(rng.sample(range(40), n))
        root = rng.choice(ranks)
        xs = expand_collective(kind, Communicator(0, ranks), root, 100)
        assert sorted((x.src, x.dst) for x in xs) == brute_force_pairs(kind, ranks, root)
        expected = {
            CollKind.BROADCAST: n - 1, CollKind.SCATTER: n - 1, CollKind.GATHER: n - 1, CollKind.REDUCE: n - 1,
            CollKind.ALLREDUCE: 2 * (n - 1), CollKind.BARRIER: 2 * (n - 1),
            CollKind.ALLGATHER: n * (n - 1), CollKind.ALLTOALL: n * (n - 1),
        }[kind]
        assert len(xs) == expected
        size = 0 if kind is CollKind.BARRIER else 100
        assert all(x.nbytes == size for x in xs)


def test_bcast_example():
    xs = expand_collective(CollKind.BROADCAST, Communicator(0, tuple(range(8))), 2, 1024)
    assert len(xs) == 7
    assert all(x.src == 2 and x.nbytes == 1024 and x.phase == PLAIN for x in xs)


def test_alltoall_example():
    xs = expand_collective(CollKind.ALLTOALL, Communicator(0, (0, 1, 2, 3)), 0, 512)
    assert len(xs) == 12 and {x.nbytes for x in xs} == {512}


def test_allreduce_phases():
    xs = expand_collective(CollKind.ALLREDUCE, Communicator(0, (0, 1, 2, 3)), 2, 256)
    assert [(x.src, x.dst, x.phase) for x in xs] == [
        (1, 0, REDUCE_PHASE), (2, 0, REDUCE_PHASE), (3, 0, REDUCE_PHASE),
        (0, 1, BCAST_PHASE), (0, 2, BCAST_PHASE), (0, 3, BCAST_PHASE),
    ]


def test_size_one_comm_is_empty():
    for kind in CollKind:
        assert expand_collective(kind, Communicator(0, (5,)), 5, 77) == []


# --- mapping ----------------------------------------------------------------------


def test_linear_mapping():
    assert map_tasks("linear", 4, range(256)).task_to_node == (0, 1, 2, 3)
    assert map_tasks("linear", 300, range(256))[256] == 0


def test_random_mapping_deterministic():
    a = map_tasks(MappingPolicy.RANDOM, 8, range(8), seed=42)
    b = map_tasks(MappingPolicy.RANDOM, 8, range(8), seed=42)
    assert a == b
    assert sorted(a.task_to_node) == list(range(8))
    assert a != map_tasks(MappingPolicy.RANDOM, 8, range(8), seed=43)


def test_explicit_mapping_checks():
    m = map_tasks("explicit", 3, range(10), table=[9, 9, 4])
    assert m.task_to_node == (9, 9, 4)
    with pytest.raises(ValueError):
        map_tasks("explicit", 3, range(10), table=[1, 2])
    with pytest.raises(ValueError):
        map_tasks("explicit", 2, range(10), table=[1, 20])


# --- session ------------------------------------------------------------------------


def test_minimal_session():
    t = parse_trace("VEFT 1 2 0 1\nSEND 0 0 1 4096 I 0\n")
    s = init_session(t, linear(2))
    assert s.state(0, 0) is LegState.ELIGIBLE
    assert s.next_event_time() == 0
    msgs = s.next_ready_messages(0)
    assert [(m.length_bytes, m.src_node, m.dst_node) for m in msgs] == [(4096, 0, 1)]
    s.notify_send_complete(msgs[0].msg_id, 400)
    assert not s.is_finished()
    s.notify_delivered(msgs[0].msg_id, 685)
    assert s.is_finished() and s.elapsed() == 685 and s.clock == 685


def test_deliver_at_500():
    t = parse_trace("VEFT 1 2 0 1\nSEND 0 0 1 4096 I 0\n")
    s = init_session(t, linear(2))
    (m,) = s.next_ready_messages(0)
    s.notify_send_complete(m.msg_id, 500)
    s.notify_delivered(m.msg_id, 500)
    assert s.is_finished() and s.clock == 500


def test_blocked_at_init():
    recs = [
        TraceRecord(0, P2PSend(0, 1, 8), INIT0),
        TraceRecord(1, P2PSend(0, 1, 8), Dependency(DepKind.AFTER_SEND, 0, 0)),
    ]
    s = Session(Trace.build(2, [], recs), linear(2))
    assert s.state(1, 0) is LegState.BLOCKED


def test_empty_trace_finished():
    s = Session(Trace.build(3, [], []), linear(3))
    assert s.is_finished() and s.elapsed() == 0
    assert s.next_event_time() is None


def test_self_message_and_dependents():
    recs = [
        TraceRecord(0, P2PSend(1, 1, 64), Dependency(DepKind.INIT, None, 50)),
        TraceRecord(1, P2PSend(1, 0, 8), Dependency(DepKind.AFTER_RECV, 0, 0)),
    ]
    s = Session(Trace.build(2, [], recs), linear(2))
    out = s.next_ready_messages(50)
    # the self-message never reaches the backend; its dependent becomes ready at once
    assert [(m.record_id, m.src_rank, m.dst_rank, m.gen_time) for m in out] == [(1, 1, 0, 50)]
    assert s.state(0, 1) is LegState.COMPLETE
    assert s.messages[0].is_self


def test_same_node_counts_as_self():
    recs = [TraceRecord(0, P2PSend(0, 1, 64), INIT0)]
    s = Session(Trace.build(2, [], recs), map_tasks("explicit", 2, range(4), table=[3, 3]))
    assert s.next_ready_messages(0) == [] and s.is_finished()


def test_tie_break_by_record_id():
    recs = [
        TraceRecord(0, P2PSend(2, 0, 8), INIT0),
        TraceRecord(1, P2PSend(1, 0, 8), INIT0),
        TraceRecord(2, P2PSend(0, 1, 8), INIT0),
    ]
    s = Session(Trace.build(3, [], recs), linear(3))
    assert [m.record_id for m in s.next_ready_messages(0)] == [0, 1, 2]


def test_additive_delay():
    recs = [
        TraceRecord(0, P2PSend(0, 1, 8), INIT0),
        TraceRecord(1, P2PSend(1, 0, 8), Dependency(DepKind.AFTER_RECV, 0, 100)),
    ]
    s = Session(Trace.build(2, [], recs), linear(2))
    (m,) = s.next_ready_messages(0)
    s.notify_send_complete(m.msg_id, 150)
    s.notify_delivered(m.msg_id, 200)
    assert s.state(1, 1) is LegState.ELIGIBLE
    assert s.next_event_time() == 300
    assert s.next_ready_messages(299) == []
    (m2,) = s.next_ready_messages(300)
    assert m2.gen_time == 300


def test_after_send_vs_after_recv():
    """A sender-side dependency fires at send-completion, before delivery."""
    recs = [
        TraceRecord(0, P2PSend(0, 1, 8), INIT0),
        TraceRecord(1, P2PSend(0, 1, 8), Dependency(DepKind.AFTER_SEND, 0, 0)),
    ]
    s = Session(Trace.build(2, [], recs), linear(2))
    (m,) = s.next_ready_messages(0)
    s.notify_send_complete(m.msg_id, 40)
    assert [x.record_id for x in s.next_ready_messages(40)] == [1]


def test_notify_errors():
    s = Session(parse_trace("VEFT 1 2 0 1\nSEND 0 0 1 4 I 0\n"), linear(2))
    (m,) = s.next_ready_messages(0)
    with pytest.raises(ReplayError):
        s.notify_delivered(99, 5)
    s.notify_delivered(m.msg_id, 10)
    with pytest.raises(ReplayError):
        s.notify_delivered(m.msg_id, 11)
    with pytest.raises(ReplayError):
        s.notify_send_complete(m.msg_id, 3)


def _bcast3():
    comm = Communicator(0, (0, 1, 2))
    return Trace.build(3, [comm], [TraceRecord(0, Collective(0, CollKind.BROADCAST, 0, 16), INIT0)])


def test_partial_broadcast():
    s = Session(_bcast3(), linear(3))
    msgs = {m.dst_rank: m for m in s.next_ready_messages(0)}
    s.notify_send_complete(msgs[1].msg_id, 10)
    s.notify_delivered(msgs[1].msg_id, 20)
    assert s.state(0, 1) is LegState.COMPLETE
    assert s.state(0, 0) is LegState.ACTIVE
    assert s.state(0, 2) is LegState.ACTIVE
    assert not s.is_finished()
    # root completes on send-completion of its last message, rank 2 on delivery
    s.notify_send_complete(msgs[2].msg_id, 30)
    assert s.state(0, 0) is LegState.COMPLETE and s.state(0, 2) is LegState.ACTIVE
    s.notify_delivered(msgs[2].msg_id, 40)
    assert s.is_finished() and s.elapsed() == 40


def _collective_trace(kind, n=3):
    comm = Communicator(0, tuple(range(n)))
    size = 0 if kind is CollKind.BARRIER else 16
    return Trace.build(n, [comm], [TraceRecord(0, Collective(0, kind, 0, size), INIT0)])


def _explore(kind):
    """Every delivery order of the collective's messages, checked against the leg oracle.

    A message is processed atomically (send-complete then delivered). The oracle:
    rank r is COMPLETE iff every message it sends and every message addressed to
    it has been processed.
    """
    trace = _collective_trace(kind)
    expect_all = {(x.src, x.dst) for x in expand_collective(kind, trace.comm(0), 0, 16)}
    orders = 0

    def walk(history):
        nonlocal orders
        s = Session(trace, linear(3))
        ready = {}
        t = 0
        for m in s.next_ready_messages(0):
            ready[(m.src_rank, m.dst_rank)] = m
        done = set()
        for pair in history:
            t += 1
            m = ready.pop(pair)
            s.notify_send_complete(m.msg_id, t)
            s.notify_delivered(m.msg_id, t)
            done.add(pair)
            for m2 in s.next_ready_messages(t):
                ready[(m2.src_rank, m2.dst_rank)] = m2
        for r in range(3):
            mine = {p for p in expect_all if r in p}
            assert (s.state(0, r) is LegState.COMPLETE) == mine.issubset(done), (history, r)
        if not ready:
            assert done == expect_all and s.is_finished()
            orders += 1
            return
        for pair in sorted(ready):
            walk(history + [pair])

    walk([])
    return orders


@pytest.mark.parametrize(
    "kind, orders",
    [(CollKind.BROADCAST, 2), (CollKind.GATHER, 2), (CollKind.ALLREDUCE, 4), (CollKind.ALLTOALL, 720)],
)
def test_delivery_orders_brute_force(kind, orders):
    # ALLREDUCE: 2 reduce orders x 2 broadcast orders, since the broadcast waits for the reduce
    assert _explore(kind) == orders


def test_allreduce_bcast_waits_for_reduce():
    s = Session(_collective_trace(CollKind.ALLREDUCE, 4), linear(4))
    first = s.next_ready_messages(0)
    assert {m.phase for m in first} == {REDUCE_PHASE} and len(first) == 3
    for i, m in enumerate(first):
        s.notify_send_complete(m.msg_id, 10 + i)
        s.notify_delivered(m.msg_id, 10 + i)
        later = s.next_ready_messages(10 + i)
        if i < 2:
            assert later == []
    assert [(m.src_rank, m.dst_rank, m.gen_time) for m in later] == [(0, 1, 12), (0, 2, 12), (0, 3, 12)]


def _drive_random(trace, seed, n_nodes=None):
    """Random backend: settles outstanding messages in random order with random latencies."""
    rng = random.Random(seed)
    n = trace.num_tasks
    mapping = linear(n) if n_nodes is None else map_tasks("random", n, range(n_nodes), seed=seed)
    s = Session(trace, mapping)
    pending = []
    now = 0
    log = []
    while True:
        t = s.next_event_time()
        if t is not None and (not pending or t <= now):
            now = max(now, t)
            for m in s.next_ready_messages(now):
                pending.append(m)
                log.append((m.msg_id, m.record_id, m.src_rank, m.dst_rank, m.length_bytes, m.gen_time))
            continue
        if not pending:
            break
        m = pending.pop(rng.randrange(len(pending)))
        now += rng.randint(0, 50)
        s.notify_send_complete(m.msg_id, now)
        now += rng.randint(0, 50)
        s.notify_delivered(m.msg_id, now)
    return s, log


@settings(max_examples=150)
@given(runnable_traces(), st.integers(0, 1000))
def test_liveness_and_conservation(trace, seed):
    s, _ = _drive_random(trace, seed)
    assert s.is_finished()
    assert s.settled == s.generated
    assert s.outstanding() == 0


@settings(max_examples=50)
@given(runnable_traces(), st.integers(0, 1000))
def test_determinism(trace, seed):
    _, a = _drive_random(trace, seed, n_nodes=trace.num_tasks + 3)
    _, b = _drive_random(trace, seed, n_nodes=trace.num_tasks + 3)
    assert a == b


@settings(max_examples=100)
@given(runnable_traces(), st.integers(0, 1000), st.integers(0, 1000))
def test_message_multiset_is_backend_independent(trace, seed_a, seed_b):
    sa, _ = _drive_random(trace, seed_a)
    sb, _ = _drive_random(trace, seed_b)
    key = lambda m: (m.record_id, m.phase, m.src_rank, m.dst_rank, m.length_bytes)  # noqa: E731
    assert sorted(map(key, sa.messages)) == sorted(map(key, sb.messages))


@settings(max_examples=100)
@given(runnable_traces(), st.integers(0, 1000))
def test_states_never_regress(trace, seed):
    rng = random.Random(seed)
    s = Session(trace, linear(trace.num_tasks))
    legs = list(s._legs)
    last = {k: s.state(*k) for k in legs}
    pending, now = [], 0
    while True:
        t = s.next_event_time()
        if t is not None and (not pending or t <= now):
            now = max(now, t)
            pending += s.next_ready_messages(now)
        elif pending:
            m = pending.pop(rng.randrange(len(pending)))
            now += rng.randint(0, 9)
            s.notify_send_complete(m.msg_id, now)
            s.notify_delivered(m.msg_id, now)
        else:
            break
        for k in legs:
            cur = s.state(*k)
            assert cur >= last[k]
            last[k] = cur
