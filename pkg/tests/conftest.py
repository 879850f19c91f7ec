import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from tracenet.synth import random_trace
from tracenet.trace import (
    CollKind,
    Collective,
    Communicator,
    Dependency,
    DepKind,
    P2PSend,
    Trace,
    TraceRecord,
)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def traces(draw, max_tasks=12, max_records=30, max_bytes=5000):
    """Structurally valid traces; dependencies may be unobservable (allowed by the grammar)."""
    n = draw(st.integers(1, max_tasks))
    num_comms = draw(st.integers(0, 3))
    comms = []
    for cid in range(num_comms):
        ranks = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
        comms.append(Communicator(cid * 3 + 1, tuple(ranks)))
    records = []
    rid = 0
    for _ in range(draw(st.integers(0, max_records))):
        rid += draw(st.integers(0, 2))
        if comms and draw(st.booleans()):
            c = draw(st.sampled_from(comms))
            kind = draw(st.sampled_from(list(CollKind)))
            size = 0 if kind is CollKind.BARRIER else draw(st.integers(0, max_bytes))
            body = Collective(c.comm_id, kind, draw(st.sampled_from(c.ranks)), size)
        else:
            body = P2PSend(draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1)), draw(st.integers(0, max_bytes)))
        delay = draw(st.integers(0, 10**6))
        if records and draw(st.booleans()):
            target = draw(st.sampled_from(records)).record_id
            dep = Dependency(draw(st.sampled_from([DepKind.AFTER_SEND, DepKind.AFTER_RECV])), target, delay)
        else:
            dep = Dependency(DepKind.INIT, None, delay)
        records.append(TraceRecord(rid, body, dep))
        rid += 1
    return Trace.build(n, comms, records)


@st.composite
def runnable_traces(draw, max_tasks=16, max_records=60):
    """Traces whose dependencies are all observable, so every replay finishes."""
    seed = draw(st.integers(0, 2**32 - 1))
    return random_trace(random.Random(seed), max_tasks=max_tasks, max_records=max_records, max_bytes=20000)


MINIMAL = "VEFT 1 2 0 1\nSEND 0 0 1 4096 I 0\n"


@pytest.fixture
def minimal_text():
    return MINIMAL
