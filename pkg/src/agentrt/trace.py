"""Append-only trace and audit trail.

One store collects every row the runtime emits; lenses, diagnostics, and the
HTTP surface are all reads over it. Rows are serialized one JSON object per
line with sorted keys, so a run's trace file is byte-stable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator


class MissingRequestId(ValueError):
    """Raised on any attempt to record a row without a request id."""


AUDIT_PLANES = frozenset(
    {
        "gate",
        "supervisor",
        "kill",
        "escalation",
        "approval",
        "throttle",
        "late_event",
        "stale_timer",
        "reject",
    }
)


@dataclass(frozen=True)
class TraceRow:
    request_id: str
    module: str
    kind: str
    payload: dict[str, Any]
    logical_time: int
    model_version: str | None = None
    policy_version: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "module": self.module,
            "kind": self.kind,
            "payload": self.payload,
            "logical_time": self.logical_time,
            "model_version": self.model_version,
            "policy_version": self.policy_version,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "TraceRow":
        raw = json.loads(line)
        return cls(
            request_id=raw["request_id"],
            module=raw["module"],
            kind=raw["kind"],
            payload=raw["payload"],
            logical_time=raw["logical_time"],
            model_version=raw.get("model_version"),
            policy_version=raw.get("policy_version"),
        )


@dataclass(frozen=True)
class AuditRecord:
    """One decision by a control plane, reconstructible from the trace."""

    request_id: str
    plane: str
    decision: str
    policy_version: str | None
    model_version: str | None
    logical_time: int


class TraceStore:
    """Thread-safe append-only row store.

    The simulation thread appends; HTTP handlers read snapshots. Rows are
    immutable and never reordered, so a snapshot is just a slice copy.
    """

    def __init__(self) -> None:
        self._rows: list[TraceRow] = []
        self._lock = threading.Lock()
        self._listeners: list[Callable[[TraceRow], None]] = []

    def record(self, row: TraceRow) -> int:
        if not row.request_id:
            raise MissingRequestId(f"trace row without request_id: kind={row.kind!r}")
        with self._lock:
            self._rows.append(row)
            index = len(self._rows) - 1
        for listener in self._listeners:
            listener(row)
        return index

    def emit(
        self,
        request_id: str,
        module: str,
        kind: str,
        payload: dict[str, Any],
        logical_time: int,
        model_version: str | None = None,
        policy_version: str | None = None,
    ) -> int:
        """Convenience constructor-and-record; returns the row index."""
        return self.record(
            TraceRow(request_id, module, kind, payload, logical_time, model_version, policy_version)
        )

    def add_listener(self, fn: Callable[[TraceRow], None]) -> None:
        self._listeners.append(fn)

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)

    def rows(self) -> list[TraceRow]:
        with self._lock:
            return list(self._rows)

    def rows_after(self, cursor: int) -> tuple[int, list[TraceRow]]:
        """Rows past a cursor, plus the new cursor. Backs the stream endpoint."""
        with self._lock:
            return len(self._rows), self._rows[cursor:]

    def rows_for(self, request_id: str) -> list[TraceRow]:
        return [r for r in self.rows() if r.request_id == request_id]

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows())

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for row in self.rows():
                fh.write(row.to_line())
                fh.write("\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TraceStore":
        store = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    store.record(TraceRow.from_line(line))
        return store


@dataclass
class AuditTrail:
    """Audit facade over a trace store.

    Every deny, restart, escalation, revoke, expiry, and refusal lands here as
    exactly one row of kind ``audit``; readers get them back as AuditRecords.
    """

    store: TraceStore
    counts: dict[str, int] = field(default_factory=dict)

    def record(
        self,
        request_id: str,
        plane: str,
        decision: str,
        logical_time: int,
        module: str = "control",
        policy_version: str | None = None,
        model_version: str | None = None,
        detail: dict[str, Any] | None = None,
    ) -> AuditRecord:
        if plane not in AUDIT_PLANES:
            raise ValueError(f"unknown audit plane: {plane!r}")
        payload: dict[str, Any] = {"plane": plane, "decision": decision}
        if detail:
            payload["detail"] = detail
        self.store.emit(
            request_id,
            module,
            "audit",
            payload,
            logical_time,
            model_version=model_version,
            policy_version=policy_version,
        )
        self.counts[plane] = self.counts.get(plane, 0) + 1
        return AuditRecord(request_id, plane, decision, policy_version, model_version, logical_time)

    def records(self, plane: str | None = None) -> list[AuditRecord]:
        out = []
        for row in self.store.rows():
            if row.kind != "audit":
                continue
            if plane is not None and row.payload.get("plane") != plane:
                continue
            out.append(
                AuditRecord(
                    request_id=row.request_id,
                    plane=row.payload["plane"],
                    decision=row.payload["decision"],
                    policy_version=row.policy_version,
                    model_version=row.model_version,
                    logical_time=row.logical_time,
                )
            )
        return out


def audit_records(rows: list[TraceRow], plane: str | None = None) -> list[AuditRecord]:
    """Extract audit records from raw rows (for loaded trace files)."""
    out = []
    for row in rows:
        if row.kind != "audit":
            continue
        if plane is not None and row.payload.get("plane") != plane:
            continue
        out.append(
            AuditRecord(
                request_id=row.request_id,
                plane=row.payload["plane"],
                decision=row.payload["decision"],
                policy_version=row.policy_version,
                model_version=row.model_version,
                logical_time=row.logical_time,
            )
        )
    return out
