"""Versioned state rows with compare-and-swap transitions.

Every mutation is a CAS against the row version, which increments by exactly
one per successful transition, so there is exactly one winner per version and
lost updates are structurally impossible. Timers carry the version they were
scheduled at; firing is itself a CAS, so a timer that raced a manual override
skips instead of clobbering.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from agentrt.clock import LogicalClock
from agentrt.trace import AuditTrail, TraceStore

HUMAN_REQUIRED = "human_required"

CAS_COST_MS = 1


class UnknownRow(KeyError):
    pass


class IllegalTransition(ValueError):
    pass


@dataclass(frozen=True)
class TimerHandle:
    timer_id: str
    row_id: str
    fire_at: int
    scheduled_version: int
    next_state: str


@dataclass
class StateRow:
    row_id: str
    state: str
    version: int
    data: dict[str, Any]
    timers: list[TimerHandle] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "row_id": self.row_id,
            "state": self.state,
            "version": self.version,
            "data": self.data,
            "timers": [
                {
                    "timer_id": t.timer_id,
                    "fire_at": t.fire_at,
                    "scheduled_version": t.scheduled_version,
                    "next_state": t.next_state,
                }
                for t in self.timers
            ],
        }


@dataclass(frozen=True)
class CasOk:
    row: StateRow


@dataclass(frozen=True)
class CasStale:
    current_version: int


@dataclass(frozen=True)
class SkippedStale:
    current_version: int
    scheduled_version: int


class StateStore:
    """Linearizable in-process store; one lock serializes all transitions."""

    def __init__(
        self,
        states: set[str],
        *,
        transitions: dict[str, set[str]] | None = None,
        snapshot_dir: str | Path | None = None,
        snapshot_every: int = 100,
        trace: TraceStore | None = None,
        audit: AuditTrail | None = None,
    ) -> None:
        if HUMAN_REQUIRED not in states:
            raise ValueError(f"state set must include {HUMAN_REQUIRED!r}")
        if snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        self.states = frozenset(states)
        self.transitions = transitions
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        self.snapshot_every = snapshot_every
        self.trace = trace
        self.audit = audit
        self._rows: dict[str, StateRow] = {}
        self._lock = threading.Lock()
        self._transition_count = 0
        self._timer_seq = 0
        self.snapshots_written: list[Path] = []

    def create_row(self, row_id: str, state: str, data: dict[str, Any] | None = None, *, at: int = 0) -> StateRow:
        self._check_state(state)
        with self._lock:
            if row_id in self._rows:
                raise ValueError(f"row already exists: {row_id}")
            row = StateRow(row_id, state, 0, dict(data or {}))
            self._rows[row_id] = row
            created = self._copy(row)
        if self.trace is not None:
            self.trace.emit(row_id, "spine", "state_transition", {"from": None, "to": state, "version": 0}, at)
        return created

    def get(self, row_id: str) -> StateRow:
        with self._lock:
            row = self._rows.get(row_id)
            if row is None:
                raise UnknownRow(row_id)
            return self._copy(row)

    def row_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._rows)

    def cas_transition(
        self,
        row_id: str,
        expected_version: int,
        next_state: str,
        data_delta: dict[str, Any] | None = None,
        *,
        clock: LogicalClock | None = None,
        actor: str = "",
    ) -> CasOk | CasStale:
        """Transition iff the row is still at expected_version.

        Raises UnknownRow for a missing row and IllegalTransition when a
        transition table is configured and forbids the edge (moves into
        human_required are always legal).
        """
        self._check_state(next_state)
        now = clock.now if clock else 0
        if clock:
            clock.advance(CAS_COST_MS)
        with self._lock:
            row = self._rows.get(row_id)
            if row is None:
                raise UnknownRow(row_id)
            if row.version != expected_version:
                result: CasOk | CasStale = CasStale(row.version)
            else:
                if (
                    self.transitions is not None
                    and next_state != HUMAN_REQUIRED
                    and next_state not in self.transitions.get(row.state, set())
                ):
                    raise IllegalTransition(f"{row.state} -> {next_state} for row {row_id}")
                prior_state = row.state
                row.state = next_state
                row.version += 1
                if data_delta:
                    row.data.update(data_delta)
                self._transition_count += 1
                result = CasOk(self._copy(row))
                if self._transition_count % self.snapshot_every == 0:
                    self._write_snapshot(row, now)
        if self.trace is not None:
            if isinstance(result, CasOk):
                self.trace.emit(
                    row_id,
                    "spine",
                    "cas",
                    {
                        "expected_version": expected_version,
                        "outcome": "ok",
                        "version": result.row.version,
                        "to_state": next_state,
                        "actor": actor,
                        "latency_ms": CAS_COST_MS,
                    },
                    now,
                )
                self.trace.emit(
                    row_id,
                    "spine",
                    "state_transition",
                    {"from": prior_state, "to": next_state, "version": result.row.version},
                    now,
                )
            else:
                self.trace.emit(
                    row_id,
                    "spine",
                    "cas",
                    {
                        "expected_version": expected_version,
                        "outcome": "stale",
                        "current_version": result.current_version,
                        "to_state": next_state,
                        "actor": actor,
                        "latency_ms": CAS_COST_MS,
                    },
                    now,
                )
        return result

    def schedule_timer(self, row_id: str, fire_at: int, next_state: str, *, clock: LogicalClock | None = None) -> TimerHandle:
        """Register a timer pinned to the row's current version."""
        self._check_state(next_state)
        with self._lock:
            row = self._rows.get(row_id)
            if row is None:
                raise UnknownRow(row_id)
            self._timer_seq += 1
            handle = TimerHandle(f"t-{row_id}-{self._timer_seq}", row_id, fire_at, row.version, next_state)
            row.timers.append(handle)
        if self.trace is not None:
            self.trace.emit(
                row_id,
                "spine",
                "timer_scheduled",
                {"timer_id": handle.timer_id, "fire_at": fire_at, "scheduled_version": handle.scheduled_version},
                clock.now if clock else 0,
            )
        return handle

    def fire_timer(self, handle: TimerHandle, *, clock: LogicalClock | None = None) -> CasOk | SkippedStale:
        """Fire as a CAS at the scheduled version; stale timers never mutate."""
        now = clock.now if clock else handle.fire_at
        with self._lock:
            row = self._rows.get(handle.row_id)
            if row is None:
                raise UnknownRow(handle.row_id)
            row.timers = [t for t in row.timers if t.timer_id != handle.timer_id]
        result = self.cas_transition(
            handle.row_id, handle.scheduled_version, handle.next_state, clock=clock, actor=handle.timer_id
        )
        if isinstance(result, CasOk):
            if self.trace is not None:
                self.trace.emit(
                    handle.row_id,
                    "spine",
                    "timer_fire",
                    {"timer_id": handle.timer_id, "outcome": "ok", "version": result.row.version},
                    now,
                )
            return result
        skipped = SkippedStale(result.current_version, handle.scheduled_version)
        if self.trace is not None:
            self.trace.emit(
                handle.row_id,
                "spine",
                "stale_timer",
                {
                    "timer_id": handle.timer_id,
                    "outcome": "skipped",
                    "scheduled_version": handle.scheduled_version,
                    "current_version": result.current_version,
                },
                now,
            )
        if self.audit is not None:
            self.audit.record(handle.row_id, "stale_timer", "skipped", now, module="spine")
        return skipped

    def due_timers(self, now: int) -> list[TimerHandle]:
        with self._lock:
            due = [t for row in self._rows.values() for t in row.timers if t.fire_at <= now]
        return sorted(due, key=lambda t: (t.fire_at, t.timer_id))

    def _write_snapshot(self, row: StateRow, now: int) -> None:
        if self.snapshot_dir is None:
            return
        self.snapshot_dir.mkdir(parents=True, exist_ok=True)
        path = self.snapshot_dir / f"snapshot-{row.row_id}-{row.version}"
        body = dict(row.to_dict(), written_at=now)
        path.write_text(json.dumps(body, sort_keys=True, separators=(",", ":")), encoding="utf-8")
        self.snapshots_written.append(path)

    @staticmethod
    def read_snapshot(path: str | Path) -> StateRow:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return StateRow(
            row_id=raw["row_id"],
            state=raw["state"],
            version=raw["version"],
            data=raw["data"],
            timers=[
                TimerHandle(t["timer_id"], raw["row_id"], t["fire_at"], t["scheduled_version"], t["next_state"])
                for t in raw["timers"]
            ],
        )

    def _check_state(self, state: str) -> None:
        if state not in self.states:
            raise IllegalTransition(f"unknown state: {state!r}")

    @staticmethod
    def _copy(row: StateRow) -> StateRow:
        return StateRow(row.row_id, row.state, row.version, dict(row.data), list(row.timers))
