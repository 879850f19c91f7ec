import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MINIMAL, traces
from tracenet.synth import random_trace
from tracenet.trace import (
    Collective,
    CollKind,
    Communicator,
    Dependency,
    DepKind,
    P2PSend,
    Trace,
    TraceError,
    TraceParseError,
    TraceRecord,
    observing_ranks,
    owning_ranks,
    parse_trace,
    validate_structure,
    write_trace,
)


def test_minimal_parse():
    t = parse_trace(io.StringIO(MINIMAL))
    assert t.num_tasks == 2
    assert len(t.records) == 1
    rec = t.records[0]
    assert rec.body == P2PSend(0, 1, 4096)
    assert rec.dep == Dependency(DepKind.INIT, None, 0)


def test_minimal_canonical_write():
    assert write_trace(parse_trace(MINIMAL)) == "VEFT 1 2 0 1\nSEND 0 0 1 4096 I 0\n"


def test_comments_and_blank_lines_ignored():
    text = "# header next\nVEFT 1 2 0 1   # two tasks\n\n  SEND 0 0 1 4096 I 0\n"
    assert write_trace(parse_trace(text)) == MINIMAL


def test_record_count_mismatch():
    with pytest.raises(TraceParseError) as e:
        parse_trace("VEFT 1 2 0 2\nSEND 0 0 1 4096 I 0\n")
    assert "declares" in e.value.reason


def test_bcast_after_recv_roundtrip():
    text = (
        "VEFT 1 4 1 5\n"
        "COMM 0 4 0 1 2 3\n"
        "SEND 0 0 1 8 I 0\n"
        "SEND 1 1 2 8 R 0 0\n"
        "SEND 2 2 3 8 R 1 0\n"
        "SEND 3 3 2 8 I 0\n"
        "COLL 5 0 BCAST 2 1024 R 3 100\n"
    )
    t = parse_trace(text)
    rec = t.records[-1]
    assert rec.body == Collective(0, CollKind.BROADCAST, 2, 1024)
    assert rec.dep == Dependency(DepKind.AFTER_RECV, 3, 100)
    again = parse_trace(write_trace(t))
    assert again == t
    for a, b in zip(again.records, t.records):
        assert (a.record_id, a.body, a.dep) == (b.record_id, b.body, b.dep)


def test_barrier_with_payload_rejected_by_writer():
    comm = Communicator(0, (0, 1))
    t = Trace.build(2, [comm], [TraceRecord(0, Collective(0, CollKind.BARRIER, 0, 7), Dependency(DepKind.INIT, None, 0))])
    with pytest.raises(TraceError):
        write_trace(t)


def test_barrier_with_payload_rejected_by_parser():
    with pytest.raises(TraceParseError):
        parse_trace("VEFT 1 2 1 1\nCOMM 0 2 0 1\nCOLL 0 0 BARRIER 0 7 I 0\n")


@pytest.mark.parametrize(
    "text, line, col",
    [
        ("VEFX 1 2 0 0\n", 1, 1),
        ("VEFT 2 2 0 0\n", 1, 6),
        ("VEFT 1 0 0 0\n", 1, 8),
        ("VEFT 1 2 0 1\nSEND 0 0 2 4 I 0\n", 2, 10),
        ("VEFT 1 2 0 1\nSEND 0 0 1 -4 I 0\n", 2, 12),
        ("VEFT 1 2 0 1\nSEND 0 0 1 4 X 0\n", 2, 14),
        ("VEFT 1 2 0 1\nSEND 0 0 1 4 I 0 9\n", 2, 18),
        ("VEFT 1 2 0 1\nSEND 0 0 1 4 S 0 0\n", 2, 16),
        ("VEFT 1 2 0 2\nSEND 0 0 1 4 I 0\nSEND 2 0 1 4 S 1 0\n", 3, 16),
        ("VEFT 1 2 0 2\nSEND 1 0 1 4 I 0\nSEND 1 0 1 4 I 0\n", 3, 6),
        ("VEFT 1 2 1 1\nCOMM 0 2 0 0\nCOLL 0 0 BCAST 0 4 I 0\n", 2, 12),
        ("VEFT 1 2 1 1\nCOMM 0 2 0 1\nCOLL 0 0 SPLAT 0 4 I 0\n", 3, 10),
        ("VEFT 1 2 1 1\nCOMM 0 2 0 1\nCOLL 0 1 BCAST 0 4 I 0\n", 3, 8),
        ("VEFT 1 3 1 1\nCOMM 0 2 0 1\nCOLL 0 0 BCAST 2 4 I 0\n", 3, 16),
        ("VEFT 1 2 0 1\nSEND 0 0 1 ٤ I 0\n", 2, 12),
    ],
)
def test_located_errors(text, line, col):
    with pytest.raises(TraceParseError) as e:
        parse_trace(text)
    assert (e.value.line, e.value.column) == (line, col)


def test_forward_dependency_finding():
    recs = [TraceRecord(i, P2PSend(0, 1, 1), Dependency(DepKind.INIT, None, 0)) for i in range(4)]
    recs.append(TraceRecord(4, P2PSend(0, 1, 1), Dependency(DepKind.AFTER_SEND, 9, 0)))
    findings = validate_structure(Trace.build(2, [], recs))
    assert [(f.record_id, f.message) for f in findings] == [(4, "forward dependency")]


def test_minimal_has_no_findings():
    assert validate_structure(parse_trace(MINIMAL)) == []


def _ownership_oracle(trace):
    """Brute force: for each (record, owner) list every (target, kind) pair visible there."""
    visible = {}
    for tgt in trace.records:
        b = tgt.body
        if isinstance(b, P2PSend):
            visible.setdefault(b.src_rank, set()).add((tgt.record_id, DepKind.AFTER_SEND))
            visible.setdefault(b.dst_rank, set()).add((tgt.record_id, DepKind.AFTER_RECV))
        else:
            for r in trace.comm(b.comm_id).ranks:
                visible.setdefault(r, set()).update({(tgt.record_id, DepKind.AFTER_SEND), (tgt.record_id, DepKind.AFTER_RECV)})
    bad = set()
    for rec in trace.records:
        if rec.dep.kind is DepKind.INIT:
            continue
        b = rec.body
        owners = [b.src_rank] if isinstance(b, P2PSend) else trace.comm(b.comm_id).ranks
        for r in owners:
            if (rec.dep.target_record, rec.dep.kind) not in visible.get(r, set()):
                bad.add(rec.record_id)
    return bad


def test_unobservable_recv_dependency():
    recs = [
        TraceRecord(0, P2PSend(2, 1, 8), Dependency(DepKind.INIT, None, 0)),
        TraceRecord(1, P2PSend(0, 2, 8), Dependency(DepKind.AFTER_RECV, 0, 0)),
    ]
    t = Trace.build(3, [], recs)
    findings = validate_structure(t)
    assert len(findings) == 1
    assert findings[0].message.startswith("dependency not observable at owning task")
    assert {f.record_id for f in findings} == _ownership_oracle(t) == {1}


@settings(max_examples=300)
@given(traces())
def test_observability_matches_brute_force(t):
    flagged = {f.record_id for f in validate_structure(t) if "not observable" in f.message}
    assert flagged == _ownership_oracle(t)


@settings(max_examples=300)
@given(traces())
def test_roundtrip(t):
    text = write_trace(t)
    assert parse_trace(text) == t
    assert write_trace(parse_trace(text)) == text
    assert "\r" not in text and "  " not in text


@settings(max_examples=200)
@given(traces())
def test_acyclic_file_order(t):
    for rec in t.records:
        if rec.dep.kind is not DepKind.INIT:
            assert rec.dep.target_record < rec.record_id


def _mutations(text, rng, count):
    """Single-token mutations of a canonical file, each of which leaves the grammar."""
    lines = text.split("\n")
    out = []
    junk = ["-1", "x", "1.5", "", "+3", "0x10", "٣", "S", "COMM", "9999999"]
    while len(out) < count:
        i = rng.randrange(len(lines) - 1)
        toks = lines[i].split(" ")
        j = rng.randrange(len(toks))
        choice = rng.randrange(4)
        if choice == 0:
            toks[j] = rng.choice(junk)
        elif choice == 1:
            del toks[j]
        elif choice == 2:
            toks.insert(j, rng.choice(["7", "I", "BCAST"]))
        else:
            toks[j] = toks[j] + "z"
        mutated = lines[:i] + [" ".join(toks)] + lines[i + 1 :]
        out.append("\n".join(mutated))
    return out


def test_mutation_fuzz_rejected_or_valid():
    """Every mutated file either parses to a valid trace or fails with a located error."""
    rng = random.Random(7)
    rejected = 0
    total = 0
    for _ in range(60):
        t = random_trace(rng, max_tasks=8, max_records=15)
        if not t.records:
            continue
        text = write_trace(t)
        for m in _mutations(text, rng, 20):
            total += 1
            try:
                parsed = parse_trace(m)
            except TraceParseError as e:
                rejected += 1
                assert e.line >= 1 and e.column >= 1
                assert e.line <= m.count("\n") + 1
            else:
                # the mutation happened to produce another legal file; it must round-trip
                assert parse_trace(write_trace(parsed)) == parsed
    assert rejected > 0.8 * total


def test_junk_tokens_always_rejected():
    rng = random.Random(11)
    for _ in range(40):
        t = random_trace(rng, max_tasks=8, max_records=10)
        lines = write_trace(t).rstrip("\n").split("\n")
        for i, line in enumerate(lines):
            toks = line.split(" ")
            for j in range(len(toks)):
                bad = toks[:j] + ["?"] + toks[j + 1 :]
                text = "\n".join(lines[:i] + [" ".join(bad)] + lines[i + 1 :])
                with pytest.raises(TraceParseError) as e:
                    parse_trace(text)
                assert e.value.line == i + 1


def test_owning_and_observing():
    comm = Communicator(0, (3, 1, 2))
    coll = TraceRecord(0, Collective(0, CollKind.REDUCE, 1, 4), Dependency(DepKind.INIT, None, 0))
    send = TraceRecord(1, P2PSend(0, 1, 4), Dependency(DepKind.INIT, None, 0))
    comms = {0: comm}
    assert owning_ranks(coll, comms) == (3, 1, 2)
    assert owning_ranks(send, comms) == (0,)
    assert observing_ranks(send, DepKind.AFTER_SEND, comms) == {0}
    assert observing_ranks(send, DepKind.AFTER_RECV, comms) == {1}
    assert observing_ranks(coll, DepKind.AFTER_RECV, comms) == {1, 2, 3}


@given(st.integers(0, 2**31))
def test_random_trace_is_clean(seed):
    t = random_trace(random.Random(seed), max_tasks=20, max_records=80)
    assert validate_structure(t) == []
