"""Append-only log, watermark routing, replay, and divergence detection."""

from __future__ import annotations

import pytest

from agentrt import rng
from agentrt.eventlog import (
    Consumer,
    ConsumerRuntime,
    EventLog,
    Watermark,
    consume,
    detect_divergence,
    flatten_fields,
    load_seed_schedule,
    replay,
    save_seed_schedule,
)
from agentrt.sdb import ProposerConfig, SimulatedProposer


def counting_consumer(consumer_id="counter", watermark_lag=0):
    """Pure fold with no proposer involvement."""
    return Consumer(
        consumer_id,
        init=lambda: {"n": 0, "kinds": []},
        apply=lambda state, event, ctx: {
            "n": state["n"] + 1,
            "kinds": state["kinds"] + [event.payload.get("kind", "?")],
        },
        watermark_lag=watermark_lag,
    )


def scoring_consumer(consumer_id="scorer"):
    """Fold whose state embeds full proposer content, so any interpretation
    shift lands in the projection."""

    def apply(state, event, ctx):
        proposal = ctx.propose({"class": "signal_impact", "kind": event.payload.get("kind", "")})
        return {"log": state["log"] + [proposal.content]}

    return Consumer(consumer_id, init=lambda: {"log": []}, apply=apply)


def build_log(times):
    log = EventLog()
    for i, t in enumerate(times):
        log.append({"kind": f"k{i}", "subject": f"s{i}"}, event_time=t, ingest_time=t + 5, producer=f"p{i}")
    return log


def test_offsets_are_dense():
    log = build_log([10, 20, 30])
    assert [e.offset for e in log] == [0, 1, 2]
    assert len(log) == 3
    assert log[1].event_time == 20


def test_log_save_load_round_trip(tmp_path):
    log = build_log([10, 20])
    loaded = EventLog.load(log.save(tmp_path / "log.jsonl"))
    assert [e for e in loaded] == [e for e in log]


def test_load_rejects_offset_gap(tmp_path):
    path = tmp_path / "gap.jsonl"
    lines = [
        '{"offset":0,"event_time":1,"ingest_time":1,"payload":{},"producer":"p"}',
        '{"offset":2,"event_time":2,"ingest_time":2,"payload":{},"producer":"p"}',
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ValueError):
        EventLog.load(path)


def test_seed_schedule_round_trip_restores_int_keys(tmp_path):
    schedule = {0: 11, 3: 99}
    loaded = load_seed_schedule(save_seed_schedule(schedule, tmp_path / "seeds.json"))
    assert loaded == schedule


def test_watermark_boundary_is_inclusive():
    mark = Watermark()
    mark.advance(100)
    assert not mark.is_late(100)
    assert mark.is_late(99)
    mark.advance(50)  # never regresses
    assert mark.low_water == 100


def test_consume_applies_on_time_events(trace, audit):
    log = build_log([10, 20, 30])
    runtime = ConsumerRuntime(consumer=counting_consumer(), model_version="m-1")
    applied, late = consume(log, runtime, {}, SimulatedProposer(ProposerConfig()), trace=trace, audit=audit)
    assert applied == [0, 1, 2]
    assert late == []
    assert runtime.state["n"] == 3
    assert [r.kind for r in trace.rows()] == ["event_applied"] * 3


def test_late_event_routed_to_audit_and_never_readmitted(trace, audit):
    log = EventLog()
    log.append({"kind": "a"}, event_time=100, ingest_time=100, producer="p")
    log.append({"kind": "b"}, event_time=40, ingest_time=110, producer="p")  # older than the mark
    runtime = ConsumerRuntime(consumer=counting_consumer(), model_version="m-1")
    applied, late = consume(log, runtime, {}, SimulatedProposer(ProposerConfig()), trace=trace, audit=audit)
    assert applied == [0]
    assert late == [1]
    assert runtime.state["kinds"] == ["a"]
    late_rows = [r for r in trace.rows() if r.kind == "late_event"]
    assert len(late_rows) == 1
    routed = audit.records("late_event")
    assert len(routed) == 1 and routed[0].decision == "routed_to_audit"

    # A second pass finds no new events and never revisits the late one.
    applied2, late2 = consume(log, runtime, {}, SimulatedProposer(ProposerConfig()), trace=trace, audit=audit)
    assert applied2 == [] and late2 == []
    assert runtime.state["kinds"] == ["a"]


def test_watermark_lag_tolerates_bounded_disorder():
    log = EventLog()
    log.append({"kind": "a"}, event_time=100, ingest_time=100, producer="p")
    log.append({"kind": "b"}, event_time=60, ingest_time=110, producer="p")
    runtime = ConsumerRuntime(consumer=counting_consumer(watermark_lag=50), model_version="m-1")
    applied, late = consume(log, runtime, {}, SimulatedProposer(ProposerConfig()))
    assert applied == [0, 1] and late == []


def test_replay_is_bit_for_bit_deterministic():
    log = build_log(list(range(10, 110, 10)))
    cfg = ProposerConfig(sigma=0.4, divergence_rate_delta=0.2)
    schedule = {i: i * 7 for i in range(10)}
    a = replay(log, scoring_consumer(), "m-1", schedule, cfg)
    b = replay(log, scoring_consumer(), "m-1", schedule, cfg)
    assert rng.canonical(a.to_dict()) == rng.canonical(b.to_dict())
    assert a.applied_offsets == list(range(10))


def test_seed_schedule_changes_noisy_replays():
    log = build_log([10])
    cfg = ProposerConfig(sigma=1.0)
    a = replay(log, scoring_consumer(), "m-1", {0: 1}, cfg)
    b = replay(log, scoring_consumer(), "m-1", {0: 2}, cfg)
    assert a.state != b.state


def test_flatten_fields_dotted_paths_and_list_leaves():
    flat = flatten_fields({"a": {"b": 1, "c": [1, 2]}, "d": "x"})
    assert flat == {"a.b": 1, "a.c": [1, 2], "d": "x"}


def test_no_divergence_at_zero_delta():
    log = build_log(list(range(10, 60, 10)))
    report = detect_divergence(log, scoring_consumer(), "m-1", "m-2", {}, ProposerConfig(divergence_rate_delta=0.0))
    assert not report.diverged
    assert report.first_divergent_offset is None
    assert report.field_diff == []


def test_divergence_found_and_fields_named(trace):
    log = build_log(list(range(10, 60, 10)))
    report = detect_divergence(
        log,
        scoring_consumer(),
        "m-1",
        "m-2",
        {},
        ProposerConfig(divergence_rate_delta=1.0),
        trace=trace,
        request_id="replay-1",
    )
    assert report.diverged
    assert report.first_divergent_offset == 0  # every interpretation moved
    assert report.field_diff, "differing projections must name fields"
    assert all({"field", "version_a", "version_b"} <= set(d) for d in report.field_diff)
    rows = [r for r in trace.rows() if r.kind == "divergence"]
    assert len(rows) == 1 and rows[0].payload["diverged"] is True


def test_first_divergent_offset_is_minimal():
    # The fold only consults the proposer from offset 2 onward, so divergence
    # cannot appear before it.
    def apply(state, event, ctx):
        if event.offset < 2:
            return {"log": state["log"] + ["fixed"]}
        proposal = ctx.propose({"class": "signal_impact", "kind": event.payload["kind"]})
        return {"log": state["log"] + [proposal.content["basis"]]}

    consumer = Consumer("late-scorer", init=lambda: {"log": []}, apply=apply)
    log = build_log(list(range(10, 60, 10)))
    report = detect_divergence(log, consumer, "m-1", "m-2", {}, ProposerConfig(divergence_rate_delta=1.0))
    assert report.diverged
    assert report.first_divergent_offset == 2


def test_divergence_report_serializes():
    log = build_log([10, 20])
    report = detect_divergence(log, scoring_consumer(), "m-1", "m-2", {}, ProposerConfig(divergence_rate_delta=1.0))
    raw = report.to_dict()
    assert raw["version_a"] == "m-1" and raw["version_b"] == "m-2"
    assert rng.canonical(raw)  # JSON-serializable throughout
