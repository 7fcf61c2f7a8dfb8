from __future__ import annotations

import pytest

from agentrt.clock import DAY_MS, LogicalClock
from agentrt.trace import (
    AUDIT_PLANES,
    AuditTrail,
    MissingRequestId,
    TraceRow,
    TraceStore,
    audit_records,
)


def test_clock_advance_accumulates():
    clock = LogicalClock()
    clock.advance(100)
    clock.advance(50)
    assert clock.now == 150


def test_clock_rejects_negative_advance():
    with pytest.raises(ValueError):
        LogicalClock().advance(-1)


def test_clock_advance_to_never_moves_backwards():
    clock = LogicalClock(now=500)
    clock.advance_to(200)
    assert clock.now == 500
    clock.advance_to(900)
    assert clock.now == 900


def test_clock_day_is_whole_days():
    assert LogicalClock(now=3 * DAY_MS + 1).day == 3
    assert LogicalClock().start_of_day(5) == 5 * DAY_MS


def test_emit_requires_request_id(trace):
    with pytest.raises(MissingRequestId):
        trace.emit("", "m", "k", {}, 0)


def test_rows_after_cursor(trace):
    for i in range(5):
        trace.emit(f"r-{i}", "m", "k", {"i": i}, i)
    cursor, rows = trace.rows_after(3)
    assert cursor == 5
    assert [r.payload["i"] for r in rows] == [3, 4]


def test_rows_for_filters_by_request(trace):
    trace.emit("a", "m", "k", {}, 0)
    trace.emit("b", "m", "k", {}, 1)
    trace.emit("a", "m", "k2", {}, 2)
    assert [r.kind for r in trace.rows_for("a")] == ["k", "k2"]


def test_save_load_round_trip_is_byte_identical(trace, tmp_path):
    trace.emit("r1", "sdb", "sdb_attempt", {"attempt": 0, "verdict": "accept"}, 12, model_version="m-1")
    trace.emit("r2", "control", "gate", {"decision": "deny"}, 15, policy_version="pricing-v1")
    path = trace.save(tmp_path / "rows.jsonl")
    loaded = TraceStore.load(path)
    assert [r.to_line() for r in loaded.rows()] == [r.to_line() for r in trace.rows()]


def test_listener_sees_every_row(trace):
    seen = []
    trace.add_listener(seen.append)
    trace.emit("r", "m", "k", {}, 0)
    assert len(seen) == 1 and seen[0].request_id == "r"


def test_audit_rejects_unknown_plane(audit):
    with pytest.raises(ValueError):
        audit.record("r", "not-a-plane", "deny", 0)


def test_audit_record_lands_as_one_audit_row(trace, audit):
    audit.record("r1", "gate", "deny", 7, policy_version="pricing-v1", detail={"rule_id": "max_discount"})
    rows = trace.rows()
    assert len(rows) == 1
    row = rows[0]
    assert row.kind == "audit"
    assert row.payload == {"plane": "gate", "decision": "deny", "detail": {"rule_id": "max_discount"}}
    assert row.policy_version == "pricing-v1"
    assert audit.counts == {"gate": 1}


def test_audit_records_filter_by_plane(trace, audit):
    audit.record("r1", "gate", "deny", 0)
    audit.record("r2", "kill", "revoked", 1)
    audit.record("r3", "gate", "deny", 2)
    assert [a.request_id for a in audit.records("gate")] == ["r1", "r3"]
    assert len(audit.records()) == 3


def test_audit_records_reconstruct_from_loaded_rows(trace, audit, tmp_path):
    audit.record("r1", "throttle", "refused", 4, detail={"window": "minute"})
    loaded = TraceStore.load(trace.save(tmp_path / "t.jsonl"))
    records = audit_records(loaded.rows(), "throttle")
    assert len(records) == 1
    assert records[0].decision == "refused"
    assert records[0].logical_time == 4


def test_every_plane_name_is_accepted(trace, audit):
    for i, plane in enumerate(sorted(AUDIT_PLANES)):
        audit.record(f"r-{i}", plane, "x", i)
    assert len(audit.records()) == len(AUDIT_PLANES)


def test_trace_row_line_round_trip():
    row = TraceRow("r", "m", "k", {"a": [1, 2]}, 9, model_version="m-2")
    assert TraceRow.from_line(row.to_line()) == row
