"""Append-only event spine with watermarked consumption and replay.

The log is the durable artifact; projections are folds over it and are never
written back. Late events (event_time below the consumer's watermark) are
routed to the audit trail and never applied, in live consumption and in
replay alike, so a replay reproduces the exact applied set. Proposer calls
inside a fold draw their seeds from a persisted per-offset schedule, which
makes the fold a pure function of (log, consumer, model_version, schedule).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from agentrt import rng
from agentrt.sdb import Proposal, ProposerConfig, SimulatedProposer
from agentrt.trace import AuditTrail, TraceStore

_FLOOR = -(1 << 62)


@dataclass(frozen=True)
class EventRecord:
    offset: int
    event_time: int
    ingest_time: int
    payload: dict[str, Any]
    producer: str


class EventLog:
    """Dense, strictly-increasing offsets; records are immutable once appended."""

    def __init__(self) -> None:
        self._events: list[EventRecord] = []

    def append(self, payload: dict[str, Any], event_time: int, ingest_time: int, producer: str) -> EventRecord:
        record = EventRecord(len(self._events), event_time, ingest_time, dict(payload), producer)
        self._events.append(record)
        return record

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self):
        return iter(self._events)

    def __getitem__(self, offset: int) -> EventRecord:
        return self._events[offset]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for e in self._events:
                fh.write(
                    json.dumps(
                        {
                            "offset": e.offset,
                            "event_time": e.event_time,
                            "ingest_time": e.ingest_time,
                            "payload": e.payload,
                            "producer": e.producer,
                        },
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                )
                fh.write("\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EventLog":
        log = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                expected = len(log._events)
                if raw["offset"] != expected:
                    raise ValueError(f"offset gap in log file: got {raw['offset']}, expected {expected}")
                log._events.append(
                    EventRecord(raw["offset"], raw["event_time"], raw["ingest_time"], raw["payload"], raw["producer"])
                )
        return log


def save_seed_schedule(schedule: dict[int, int], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps({str(k): v for k, v in sorted(schedule.items())}, sort_keys=True, separators=(",", ":")),
        encoding="utf-8",
    )
    return path


def load_seed_schedule(path: str | Path) -> dict[int, int]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {int(k): v for k, v in raw.items()}


@dataclass
class Watermark:
    """Monotone low-water mark. Comparison is inclusive: an event whose
    event_time equals low_water is on time."""

    low_water: int = _FLOOR

    def advance(self, to: int) -> int:
        if to > self.low_water:
            self.low_water = to
        return self.low_water

    def is_late(self, event_time: int) -> bool:
        return event_time < self.low_water


class FoldContext:
    """Per-event context handed to a consumer's apply function."""

    def __init__(self, proposer: SimulatedProposer, model_version: str, seed: int, offset: int) -> None:
        self.model_version = model_version
        self.offset = offset
        self._proposer = proposer
        self._seed = seed

    def propose(self, input: dict[str, Any]) -> Proposal:
        return self._proposer.propose(input, self._seed, self.model_version)


@dataclass
class Consumer:
    """A deterministic fold: init() builds the zero state, apply() advances it.

    apply(state, event, ctx) must return the next state and must not mutate
    the event. watermark_lag is how far the low-water mark trails the largest
    applied event_time.
    """

    consumer_id: str
    init: Callable[[], dict[str, Any]]
    apply: Callable[[dict[str, Any], EventRecord, FoldContext], dict[str, Any]]
    watermark_lag: int = 0


@dataclass
class Projection:
    consumer_id: str
    model_version: str
    state: dict[str, Any]
    last_offset: int
    applied_offsets: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "consumer_id": self.consumer_id,
            "model_version": self.model_version,
            "state": self.state,
            "last_offset": self.last_offset,
            "applied_offsets": self.applied_offsets,
        }


@dataclass
class ConsumerRuntime:
    """Live consumption cursor: projection state plus watermark position."""

    consumer: Consumer
    model_version: str
    state: dict[str, Any] = field(default_factory=dict)
    watermark: Watermark = field(default_factory=Watermark)
    cursor: int = 0
    applied_offsets: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.state:
            self.state = self.consumer.init()


def consume(
    log: EventLog,
    runtime: ConsumerRuntime,
    seed_schedule: dict[int, int],
    proposer: SimulatedProposer,
    *,
    trace: TraceStore | None = None,
    audit: AuditTrail | None = None,
    request_id_of: Callable[[EventRecord], str] | None = None,
) -> tuple[list[int], list[int]]:
    """Apply new events through the watermark; route late ones to audit.

    Returns (applied_offsets, late_offsets) for this call. Late events are
    never re-admitted: once routed to audit they are skipped forever.
    """
    applied: list[int] = []
    late: list[int] = []
    rid_of = request_id_of or (lambda e: e.producer or runtime.consumer.consumer_id)

    while runtime.cursor < len(log):
        event = log[runtime.cursor]
        runtime.cursor += 1
        rid = rid_of(event)
        if runtime.watermark.is_late(event.event_time):
            late.append(event.offset)
            if trace is not None:
                trace.emit(
                    rid,
                    "spine",
                    "late_event",
                    {"offset": event.offset, "event_time": event.event_time, "low_water": runtime.watermark.low_water},
                    event.ingest_time,
                )
            if audit is not None:
                audit.record(rid, "late_event", "routed_to_audit", event.ingest_time, module="spine")
            continue

        seed = seed_schedule.get(event.offset, event.offset)
        ctx = FoldContext(proposer, runtime.model_version, seed, event.offset)
        runtime.state = runtime.consumer.apply(runtime.state, event, ctx)
        runtime.applied_offsets.append(event.offset)
        applied.append(event.offset)
        low_water_before = runtime.watermark.low_water
        runtime.watermark.advance(event.event_time - runtime.consumer.watermark_lag)
        if trace is not None:
            trace.emit(
                rid,
                "spine",
                "event_applied",
                {
                    "offset": event.offset,
                    "event_time": event.event_time,
                    "low_water": max(low_water_before, _FLOOR),
                },
                event.ingest_time,
                model_version=runtime.model_version,
            )
    return applied, late


def replay(
    log: EventLog,
    consumer: Consumer,
    model_version: str,
    seed_schedule: dict[int, int],
    proposer_cfg: ProposerConfig,
) -> Projection:
    """Rebuild the projection from offset zero. Bit-for-bit deterministic."""
    runtime = ConsumerRuntime(consumer=consumer, model_version=model_version)
    proposer = SimulatedProposer(proposer_cfg)
    consume(log, runtime, seed_schedule, proposer)
    return Projection(
        consumer_id=consumer.consumer_id,
        model_version=model_version,
        state=runtime.state,
        last_offset=len(log) - 1,
        applied_offsets=list(runtime.applied_offsets),
    )


def flatten_fields(value: Any, prefix: str = "") -> dict[str, Any]:
    """Dict of dotted leaf paths to scalar values."""
    if isinstance(value, dict):
        out: dict[str, Any] = {}
        for key in sorted(value):
            out.update(flatten_fields(value[key], f"{prefix}{key}."))
        return out
    return {prefix.rstrip("."): value}


@dataclass
class DivergenceReport:
    diverged: bool
    first_divergent_offset: int | None
    field_diff: list[dict[str, Any]]
    version_a: str
    version_b: str
    projection_a: dict[str, Any]
    projection_b: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "diverged": self.diverged,
            "first_divergent_offset": self.first_divergent_offset,
            "field_diff": self.field_diff,
            "version_a": self.version_a,
            "version_b": self.version_b,
            "projection_a": self.projection_a,
            "projection_b": self.projection_b,
        }


def _field_diff(state_a: dict[str, Any], state_b: dict[str, Any]) -> list[dict[str, Any]]:
    flat_a, flat_b = flatten_fields(state_a), flatten_fields(state_b)
    diff = []
    for path in sorted(set(flat_a) | set(flat_b)):
        va, vb = flat_a.get(path), flat_b.get(path)
        if va != vb:
            diff.append({"field": path, "version_a": va, "version_b": vb})
    return diff


def detect_divergence(
    log: EventLog,
    consumer: Consumer,
    version_a: str,
    version_b: str,
    seed_schedule: dict[int, int],
    proposer_cfg: ProposerConfig,
    *,
    trace: TraceStore | None = None,
    request_id: str = "replay",
) -> DivergenceReport:
    """Replay under both versions and compare folded state structurally.

    The first divergent offset is minimal: states are snapshotted after every
    applied event and compared in offset order.
    """
    snaps: dict[str, list[tuple[int, str]]] = {}
    finals: dict[str, Projection] = {}
    for version in (version_a, version_b):
        runtime = ConsumerRuntime(consumer=consumer, model_version=version)
        proposer = SimulatedProposer(proposer_cfg)
        checkpoints: list[tuple[int, str]] = []
        # Same loop shape as consume(), minus trace/audit, plus a state
        # snapshot after every applied event so "first divergent" is minimal.
        while runtime.cursor < len(log):
            event = log[runtime.cursor]
            runtime.cursor += 1
            if runtime.watermark.is_late(event.event_time):
                continue
            seed = seed_schedule.get(event.offset, event.offset)
            ctx = FoldContext(proposer, version, seed, event.offset)
            runtime.state = runtime.consumer.apply(runtime.state, event, ctx)
            runtime.applied_offsets.append(event.offset)
            runtime.watermark.advance(event.event_time - consumer.watermark_lag)
            checkpoints.append((event.offset, rng.canonical(runtime.state)))
        snaps[version] = checkpoints
        finals[version] = Projection(consumer.consumer_id, version, runtime.state, len(log) - 1, runtime.applied_offsets)

    first: int | None = None
    for (off_a, snap_a), (off_b, snap_b) in zip(snaps[version_a], snaps[version_b]):
        if off_a != off_b or snap_a != snap_b:
            first = min(off_a, off_b)
            break

    diverged = first is not None
    diff = _field_diff(finals[version_a].state, finals[version_b].state) if diverged else []
    report = DivergenceReport(
        diverged=diverged,
        first_divergent_offset=first,
        field_diff=diff,
        version_a=version_a,
        version_b=version_b,
        projection_a=finals[version_a].to_dict(),
        projection_b=finals[version_b].to_dict(),
    )
    if trace is not None:
        trace.emit(
            request_id,
            "spine",
            "divergence",
            {
                "diverged": diverged,
                "first_divergent_offset": first,
                "version_a": version_a,
                "version_b": version_b,
                "fields": [d["field"] for d in diff],
            },
            logical_time=0,
        )
    return report
