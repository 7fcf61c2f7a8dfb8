"""Read lenses over the trace, and the HTTP surface operations consoles use.

One trace, three projections. The operational lens answers "is it healthy",
the business lens answers "where is the work", the compliance lens answers
"who decided what under which policy". Kinds may appear in more than one
lens; a kind no lens claims falls through to operational, so every row stays
reachable from at least one view.

The server is read-mostly: GETs serve straight from the live stores, POSTs
queue commands that the simulation applies at its next tick boundary. The
exception is conflict detection, which happens at POST time so a double
resolution gets its 409 immediately instead of a silent no-op later.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, urlsplit

from agentrt.clock import LogicalClock
from agentrt.control import (
    AlreadyResolved,
    ApprovalLedger,
    CancellationToken,
    EscalationLedger,
    Throttle,
    ThrottleCaps,
    UnknownApproval,
    UnknownEscalation,
    revoke,
)
from agentrt.selector import AdrRecord
from agentrt.trace import AuditTrail, TraceRow, TraceStore

LENSES = ("operational", "business", "compliance")

OPERATIONAL_KINDS = frozenset(
    {
        "sdb_attempt",
        "cas",
        "timer_scheduled",
        "timer_fire",
        "stale_timer",
        "dispatch",
        "sub_result",
        "retry_after_deadline",
        "scatter",
        "peer_write",
        "peer_failure",
        "compensation",
        "compensation_alarm",
        "gather",
        "restart",
        "halt",
        "tool_call",
        "throttle",
        "event_applied",
        "late_event",
        "divergence",
    }
)

BUSINESS_KINDS = frozenset({"state_transition", "signal", "policy_change", "merge"})

COMPLIANCE_KINDS = frozenset(
    {
        "audit",
        "gate",
        "sdb_attempt",
        "approval",
        "escalation",
        "halt",
        "throttle",
        "cas",
        "state_transition",
        "policy_change",
        "merge",
    }
)

_CLAIMED_KINDS = OPERATIONAL_KINDS | BUSINESS_KINDS | COMPLIANCE_KINDS

DEFAULT_TERMINAL_STATES = frozenset(
    {"renewed", "renewed_with_offer", "restructured", "churned", "escalated", "closed", "completed"}
)


def lens_kinds(lens: str) -> frozenset[str]:
    if lens == "operational":
        return OPERATIONAL_KINDS
    if lens == "business":
        return BUSINESS_KINDS
    if lens == "compliance":
        return COMPLIANCE_KINDS
    raise KeyError(lens)


def _in_lens(row: TraceRow, lens: str) -> bool:
    if lens == "operational":
        return row.kind in OPERATIONAL_KINDS or row.kind not in _CLAIMED_KINDS
    return row.kind in lens_kinds(lens)


def uncovered_kinds(rows: list[TraceRow]) -> set[str]:
    """Kinds visible through no lens. Empty by construction: unknown kinds
    fall through to operational."""
    return {r.kind for r in rows if not any(_in_lens(r, lens) for lens in LENSES)}


def _p95(values: list[int]) -> int:
    if not values:
        return 0
    ordered = sorted(values)
    return ordered[max(0, math.ceil(0.95 * len(ordered)) - 1)]


def _operational_aggregates(rows: list[TraceRow], terminal_states: frozenset[str]) -> dict[str, Any]:
    latencies = [r.payload["latency_ms"] for r in rows if isinstance(r.payload.get("latency_ms"), (int, float))]
    opened: set[str] = set()
    last_state: dict[str, str] = {}
    halted: set[str] = set()
    sdb_total = 0
    sdb_rejected = 0
    proposer_retries = 0
    cas_retries = 0
    restarts = 0
    throttle_refusals = 0
    for row in rows:
        if row.kind == "state_transition":
            if row.payload.get("from") is None:
                opened.add(row.request_id)
            last_state[row.request_id] = row.payload.get("to", "")
        elif row.kind == "halt":
            halted.add(row.request_id)
        elif row.kind == "sdb_attempt":
            sdb_total += 1
            if row.payload.get("status") == "incomplete":
                sdb_rejected += 1
            # attempt is zero-based; anything past the first call is a retry
            if row.payload.get("attempt", 0) >= 1:
                proposer_retries += 1
        elif row.kind == "cas" and row.payload.get("outcome") == "stale":
            cas_retries += 1
        elif row.kind == "restart":
            restarts += 1
        elif row.kind == "throttle" and row.payload.get("decision") == "refused":
            throttle_refusals += 1
    done = {rid for rid, state in last_state.items() if state in terminal_states}
    queue_depth = len(opened - done - halted)
    return {
        "p95_latency_ms": _p95(latencies),
        "queue_depth": queue_depth,
        "error_rate": round(sdb_rejected / sdb_total, 6) if sdb_total else 0.0,
        "retry_counts": {
            "proposer_retries": proposer_retries,
            "cas_retries": cas_retries,
            "restarts": restarts,
            "throttle_refusals": throttle_refusals,
        },
    }


def _business_aggregates(rows: list[TraceRow], terminal_states: frozenset[str]) -> dict[str, Any]:
    opened: set[str] = set()
    last_state: dict[str, str] = {}
    signal_counts: dict[str, int] = {}
    policy_changes: list[dict[str, Any]] = []
    for row in rows:
        if row.kind == "state_transition":
            if row.payload.get("from") is None:
                opened.add(row.request_id)
            last_state[row.request_id] = row.payload.get("to", "")
        elif row.kind == "signal":
            name = str(row.payload.get("kind", "unknown"))
            signal_counts[name] = signal_counts.get(name, 0) + 1
        elif row.kind == "policy_change":
            policy_changes.append(
                {"at": row.logical_time, "from": row.payload.get("from"), "to": row.payload.get("to")}
            )
    current_states: dict[str, int] = {}
    for state in last_state.values():
        current_states[state] = current_states.get(state, 0) + 1
    terminal_counts = {s: n for s, n in sorted(current_states.items()) if s in terminal_states}
    return {
        "opened": len(opened),
        "current_states": dict(sorted(current_states.items())),
        "terminal_counts": terminal_counts,
        "signal_counts": dict(sorted(signal_counts.items())),
        "policy_changes": policy_changes,
    }


def _compliance_aggregates(rows: list[TraceRow]) -> dict[str, Any]:
    audit_counts: dict[str, int] = {}
    lineage: dict[str, dict[str, Any]] = {}
    for row in rows:
        entry = lineage.setdefault(
            row.request_id,
            {"policy_versions": set(), "model_versions": set(), "planes": set(), "row_count": 0},
        )
        entry["row_count"] += 1
        if row.policy_version:
            entry["policy_versions"].add(row.policy_version)
        if row.model_version:
            entry["model_versions"].add(row.model_version)
        if row.kind == "audit":
            plane = str(row.payload.get("plane", "unknown"))
            audit_counts[plane] = audit_counts.get(plane, 0) + 1
            entry["planes"].add(plane)
    lineage_out = {
        rid: {
            "policy_versions": sorted(entry["policy_versions"]),
            "model_versions": sorted(entry["model_versions"]),
            "planes": sorted(entry["planes"]),
            "row_count": entry["row_count"],
        }
        for rid, entry in sorted(lineage.items())
    }
    return {"audit_counts": dict(sorted(audit_counts.items())), "lineage": lineage_out}


@dataclass(frozen=True)
class LensSnapshot:
    lens: str
    as_of: int | None
    row_count: int
    aggregates: dict[str, Any]
    rows: tuple[TraceRow, ...]

    def to_dict(self, row_limit: int | None = None) -> dict[str, Any]:
        rows = self.rows if row_limit is None else self.rows[-row_limit:]
        return {
            "lens": self.lens,
            "as_of": self.as_of,
            "row_count": self.row_count,
            "aggregates": self.aggregates,
            "rows": [r.to_dict() for r in rows],
        }


def project(
    rows: list[TraceRow],
    lens: str,
    *,
    as_of: int | None = None,
    terminal_states: frozenset[str] = DEFAULT_TERMINAL_STATES,
) -> LensSnapshot:
    """Filter rows into one lens and compute that lens's aggregates."""
    if lens not in LENSES:
        raise KeyError(lens)
    window = [r for r in rows if as_of is None or r.logical_time <= as_of]
    visible = [r for r in window if _in_lens(r, lens)]
    if lens == "operational":
        aggregates = _operational_aggregates(window, terminal_states)
    elif lens == "business":
        aggregates = _business_aggregates(window, terminal_states)
    else:
        aggregates = _compliance_aggregates(visible)
    return LensSnapshot(lens, as_of, len(visible), aggregates, tuple(visible))


# ---------------------------------------------------------------------------
# HTTP console surface


@dataclass(frozen=True)
class Command:
    kind: str  # "approval_resolve" | "escalation_resolve" | "kill" | "set_caps"
    payload: dict[str, Any]


class ConsoleServer:
    """Serves /v1 over a loopback ThreadingHTTPServer.

    GETs read live state. POSTs validate, reserve conflicts (so a second
    resolution of the same item gets 409 at once), and queue a Command; the
    owning loop calls apply_commands() at each tick boundary.
    """

    STREAM_LIMIT = 1000
    LENS_ROW_LIMIT = 200

    def __init__(
        self,
        trace: TraceStore,
        clock: LogicalClock,
        *,
        approvals: ApprovalLedger | None = None,
        escalations: EscalationLedger | None = None,
        token: CancellationToken | None = None,
        throttle: Throttle | None = None,
        audit: AuditTrail | None = None,
        adr_provider: Callable[[], AdrRecord | None] | None = None,
        terminal_states: frozenset[str] = DEFAULT_TERMINAL_STATES,
        extra_health: Callable[[], dict[str, Any]] | None = None,
    ) -> None:
        self.trace = trace
        self.clock = clock
        self.approvals = approvals
        self.escalations = escalations
        self.token = token
        self.throttle = throttle
        self.audit = audit
        self.adr_provider = adr_provider
        self.terminal_states = terminal_states
        self.extra_health = extra_health
        self._commands: list[Command] = []
        self._reserved_approvals: set[str] = set()
        self._reserved_escalations: set[str] = set()
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle

    def start(self, port: int = 0, host: str = "127.0.0.1") -> int:
        if self._httpd is not None:
            raise RuntimeError("server already started")
        console = self

        class Handler(_ConsoleHandler):
            server_console = console

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="console-http", daemon=True)
        self._thread.start()
        return self.port

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    @property
    def running(self) -> bool:
        return self._httpd is not None

    @property
    def port(self) -> int:
        if self._httpd is None:
            raise RuntimeError("server not started")
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    # -- command queue

    def enqueue(self, command: Command) -> None:
        with self._lock:
            self._commands.append(command)

    def drain_commands(self) -> list[Command]:
        with self._lock:
            drained, self._commands = self._commands, []
            return drained

    def pending_commands(self) -> int:
        with self._lock:
            return len(self._commands)

    def apply_commands(self, *, clock: LogicalClock | None = None) -> list[dict[str, Any]]:
        """Drain the queue and apply each command to its bound plane.

        A reservation can still lose to the SLA clock (the approval expired
        between POST and tick); that surfaces as outcome "superseded", not an
        error, because the deadline decision is the one that stands.
        """
        clock = clock or self.clock
        outcomes: list[dict[str, Any]] = []
        for command in self.drain_commands():
            outcome: dict[str, Any] = {"kind": command.kind, **command.payload}
            try:
                if command.kind == "approval_resolve":
                    assert self.approvals is not None
                    self.approvals.resolve(
                        command.payload["approval_id"],
                        command.payload["decision"],
                        clock=clock,
                        resolver=command.payload.get("resolver", "console"),
                    )
                    outcome["outcome"] = "applied"
                elif command.kind == "escalation_resolve":
                    assert self.escalations is not None
                    self.escalations.resolve(
                        command.payload["escalation_id"],
                        command.payload["next_state"],
                        clock=clock,
                        resolver=command.payload.get("resolver", "console"),
                    )
                    outcome["outcome"] = "applied"
                elif command.kind == "kill":
                    assert self.token is not None
                    first = revoke(self.token, clock=clock, audit=self.audit, request_id=command.payload.get("request_id", "kill"))
                    outcome["outcome"] = "applied" if first else "superseded"
                elif command.kind == "set_caps":
                    assert self.throttle is not None
                    caps = ThrottleCaps(command.payload["per_minute"], command.payload["per_day"])
                    self.throttle.set_caps(caps, command.payload.get("scope"))
                    outcome["outcome"] = "applied"
                else:  # pragma: no cover - enqueue() is the only producer
                    outcome["outcome"] = "unknown_command"
            except AlreadyResolved:
                outcome["outcome"] = "superseded"
            outcomes.append(outcome)
        return outcomes

    # -- request handling, called from handler threads

    def handle_get(self, path: str, query: dict[str, list[str]]) -> tuple[int, dict[str, Any]]:
        parts = [p for p in path.split("/") if p]
        if parts[:1] != ["v1"]:
            return 404, {"error": "unknown path"}
        parts = parts[1:]
        if parts == ["health"]:
            body: dict[str, Any] = {
                "status": "ok",
                "logical_time": self.clock.now,
                "trace_rows": len(self.trace),
                "planes_bound": sorted(
                    name
                    for name, bound in (
                        ("approvals", self.approvals),
                        ("escalations", self.escalations),
                        ("kill_switch", self.token),
                        ("throttle", self.throttle),
                    )
                    if bound is not None
                ),
            }
            if self.extra_health is not None:
                body.update(self.extra_health())
            return 200, body
        if len(parts) == 2 and parts[0] == "lens":
            if parts[1] not in LENSES:
                return 404, {"error": f"unknown lens: {parts[1]}", "lenses": list(LENSES)}
            snapshot = project(
                self.trace.rows(), parts[1], as_of=self.clock.now, terminal_states=self.terminal_states
            )
            return 200, snapshot.to_dict(row_limit=self.LENS_ROW_LIMIT)
        if len(parts) == 2 and parts[0] == "trace":
            rows = self.trace.rows_for(parts[1])
            if not rows:
                return 404, {"error": f"no rows for request: {parts[1]}"}
            return 200, {"request_id": parts[1], "rows": [r.to_dict() for r in rows]}
        if parts == ["approvals", "pending"]:
            if self.approvals is None:
                return 503, {"error": "approval plane not bound"}
            return 200, {"now": self.clock.now, "pending": self.approvals.pending(self.clock.now)}
        if parts == ["escalations", "pending"]:
            if self.escalations is None:
                return 503, {"error": "escalation plane not bound"}
            pending = [
                {
                    "escalation_id": r.escalation_id,
                    "row_id": r.row_id,
                    "reason": r.reason,
                    "opened_at": r.opened_at,
                }
                for r in self.escalations.pending()
            ]
            return 200, {"now": self.clock.now, "pending": pending}
        if parts == ["adr"]:
            record = self.adr_provider() if self.adr_provider else None
            if record is None:
                return 404, {"error": "no decision record published"}
            return 200, {"draft": record.draft, "record": record.to_dict(), "text": record.render()}
        if parts == ["stream"]:
            try:
                after = int(query.get("after", ["0"])[0])
            except ValueError:
                return 400, {"error": "after must be an integer cursor"}
            cursor, rows = self.trace.rows_after(max(0, after))
            if len(rows) > self.STREAM_LIMIT:
                rows = rows[: self.STREAM_LIMIT]
                cursor = max(0, after) + len(rows)
            return 200, {
                "next_cursor": cursor,
                "rows": [r.to_dict() for r in rows],
                "logical_time": self.clock.now,
            }
        return 404, {"error": "unknown path"}

    def handle_post(self, path: str, body: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        parts = [p for p in path.split("/") if p]
        if parts[:1] != ["v1"]:
            return 404, {"error": "unknown path"}
        parts = parts[1:]
        if len(parts) == 3 and parts[0] == "approvals" and parts[2] == "resolve":
            return self._post_approval(parts[1], body)
        if len(parts) == 3 and parts[0] == "escalations" and parts[2] == "resolution":
            return self._post_escalation(parts[1], body)
        if parts == ["kill"]:
            if self.token is None:
                return 503, {"error": "kill plane not bound"}
            self.enqueue(Command("kill", {"reason": str(body.get("reason", "console kill"))}))
            return 202, {"queued": True, "kind": "kill"}
        if parts == ["throttle"]:
            return self._post_throttle(body)
        return 404, {"error": "unknown path"}

    def _post_approval(self, approval_id: str, body: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        if self.approvals is None:
            return 503, {"error": "approval plane not bound"}
        decision = body.get("decision")
        if decision not in ("approved", "denied"):
            return 400, {"error": "decision must be approved or denied"}
        try:
            existing = self.approvals.resolution(approval_id)
        except UnknownApproval:
            return 404, {"error": f"unknown approval: {approval_id}"}
        with self._lock:
            if existing is not None or approval_id in self._reserved_approvals:
                detail = existing.decision if existing is not None else "pending resolution"
                return 409, {"error": "already resolved", "resolution": detail}
            self._reserved_approvals.add(approval_id)
            self._commands.append(
                Command(
                    "approval_resolve",
                    {
                        "approval_id": approval_id,
                        "decision": decision,
                        "resolver": str(body.get("resolver", "console")),
                    },
                )
            )
        return 202, {"queued": True, "approval_id": approval_id, "decision": decision}

    def _post_escalation(self, escalation_id: str, body: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        if self.escalations is None:
            return 503, {"error": "escalation plane not bound"}
        next_state = body.get("next_state")
        if not next_state or not isinstance(next_state, str):
            return 400, {"error": "next_state is required"}
        try:
            record = self.escalations.get(escalation_id)
        except UnknownEscalation:
            return 404, {"error": f"unknown escalation: {escalation_id}"}
        with self._lock:
            if record.status == "resolved" or escalation_id in self._reserved_escalations:
                return 409, {"error": "already resolved"}
            self._reserved_escalations.add(escalation_id)
            self._commands.append(
                Command(
                    "escalation_resolve",
                    {
                        "escalation_id": escalation_id,
                        "next_state": next_state,
                        "resolver": str(body.get("resolver", "console")),
                    },
                )
            )
        return 202, {"queued": True, "escalation_id": escalation_id, "next_state": next_state}

    def _post_throttle(self, body: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        if self.throttle is None:
            return 503, {"error": "throttle plane not bound"}
        try:
            per_minute = int(body["per_minute"])
            per_day = int(body["per_day"])
            ThrottleCaps(per_minute, per_day)
        except (KeyError, TypeError, ValueError):
            return 400, {"error": "per_minute and per_day must be integers >= 1"}
        payload: dict[str, Any] = {"per_minute": per_minute, "per_day": per_day}
        if body.get("scope"):
            payload["scope"] = str(body["scope"])
        self.enqueue(Command("set_caps", payload))
        return 202, {"queued": True, **payload}


class _ConsoleHandler(BaseHTTPRequestHandler):
    server_console: ConsoleServer  # set by the subclass ConsoleServer.start builds

    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002 - stdlib signature
        pass

    def _send(self, status: int, body: dict[str, Any]) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def do_OPTIONS(self) -> None:  # noqa: N802 - stdlib naming
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self) -> None:  # noqa: N802
        split = urlsplit(self.path)
        try:
            status, body = self.server_console.handle_get(split.path, parse_qs(split.query))
        except Exception as exc:  # pragma: no cover - surfaced to the client
            status, body = 500, {"error": f"{type(exc).__name__}: {exc}"}
        self._send(status, body)

    def do_POST(self) -> None:  # noqa: N802
        split = urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw) if raw else {}
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except ValueError:
            self._send(400, {"error": "request body must be a JSON object"})
            return
        try:
            status, reply = self.server_console.handle_post(split.path, body)
        except Exception as exc:  # pragma: no cover - surfaced to the client
            status, reply = 500, {"error": f"{type(exc).__name__}: {exc}"}
        self._send(status, reply)
