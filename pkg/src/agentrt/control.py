"""Control planes: supervision, policy gate, kill switch, escalation,
approval, and throttling.

The gate and the supervisor run on every deployment. The four operator planes
(kill, escalation, approval, throttle) must each be either enabled or
explicitly deferred with a dated rationale; the control plane bundle refuses
to construct otherwise. Every deny, restart, escalation, revoke, expiry, and
refusal writes exactly one audit record.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from agentrt.clock import SECOND_MS, LogicalClock
from agentrt.statestore import HUMAN_REQUIRED, CasOk, StateStore
from agentrt.trace import AuditTrail, TraceStore

GATE_RULE_COST_MS = 1
KILL_PROPAGATION_BUDGET_MS = 1 * SECOND_MS

PLANES = ("kill_switch", "escalation", "approval", "throttling")


class MissingPlaneDeclaration(ValueError):
    pass


class PlaneDeferred(RuntimeError):
    pass


class AlreadyResolved(RuntimeError):
    pass


class UnknownApproval(KeyError):
    pass


class UnknownEscalation(KeyError):
    pass


# ---------------------------------------------------------------------------
# Supervision


@dataclass(frozen=True)
class SupervisorSpec:
    max_restarts: int
    backoff_base_ms: int
    backoff_factor: float
    strategy: str = "one_for_one"
    jitter: Callable[[int, int], int] | None = None  # hook only; off by default

    def __post_init__(self) -> None:
        if self.strategy != "one_for_one":
            raise ValueError(f"unsupported strategy: {self.strategy!r}")
        if self.max_restarts < 0 or self.backoff_base_ms < 0 or self.backoff_factor <= 0:
            raise ValueError("bad supervisor spec")

    def backoff_ms(self, restart_n: int) -> int:
        """Delay before restart n (1-based): base * factor^(n-1), plus jitter if hooked."""
        delay = int(self.backoff_base_ms * self.backoff_factor ** (restart_n - 1))
        if self.jitter is not None:
            delay += self.jitter(restart_n, delay)
        return delay


@dataclass(frozen=True)
class Completed:
    value: Any
    restarts: int


@dataclass(frozen=True)
class Escalated:
    reason: str
    restarts: int


def supervise(
    request_id: str,
    child: Callable[[int], Any],
    spec: SupervisorSpec,
    *,
    clock: LogicalClock,
    trace: TraceStore | None = None,
    audit: AuditTrail | None = None,
) -> Completed | Escalated:
    """Run a child under one-for-one restarts with exponential backoff.

    The child is invoked with the attempt index; any exception is a crash.
    After max_restarts failed restarts the supervisor escalates instead of
    looping. Restart delays land on the logical clock.
    """
    last_crash = ""
    for attempt in range(spec.max_restarts + 1):
        try:
            value = child(attempt)
        except Exception as exc:  # noqa: BLE001 - crashes are data here
            last_crash = f"{type(exc).__name__}: {exc}"
            if attempt == spec.max_restarts:
                break
            restart_n = attempt + 1
            delay = spec.backoff_ms(restart_n)
            clock.advance(delay)
            if trace is not None:
                trace.emit(
                    request_id,
                    "control",
                    "restart",
                    {"restart_n": restart_n, "delay_ms": delay, "crash_reason": last_crash},
                    clock.now,
                )
            if audit is not None:
                audit.record(request_id, "supervisor", f"restart_{restart_n}", clock.now, detail={"crash": last_crash})
            continue
        return Completed(value, attempt)

    reason = f"max_restarts ({spec.max_restarts}) exhausted; last crash: {last_crash}"
    if audit is not None:
        audit.record(request_id, "escalation", "supervisor_escalated", clock.now, detail={"reason": reason})
    if trace is not None:
        trace.emit(request_id, "control", "escalation", {"source": "supervisor", "reason": reason}, clock.now)
    return Escalated(reason, spec.max_restarts)


# ---------------------------------------------------------------------------
# Policy gate


@dataclass(frozen=True)
class GateRule:
    """Deterministic predicate; returns a violation reason or None."""

    rule_id: str
    check: Callable[[dict[str, Any], dict[str, Any]], str | None]


@dataclass(frozen=True)
class GatePolicy:
    policy_version: str
    rules: tuple[GateRule, ...]

    def __post_init__(self) -> None:
        ids = [r.rule_id for r in self.rules]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate rule ids in gate policy")


@dataclass(frozen=True)
class GateAllow:
    policy_version: str
    latency_ms: int


@dataclass(frozen=True)
class GateDeny:
    rule_id: str
    reason: str
    policy_version: str
    latency_ms: int


def gate_check(
    request_id: str,
    action: dict[str, Any],
    context: dict[str, Any],
    policy: GatePolicy,
    *,
    clock: LogicalClock,
    trace: TraceStore | None = None,
    audit: AuditTrail | None = None,
) -> GateAllow | GateDeny:
    """Evaluate ordered rules; first violation denies. No model calls, ever.

    An action no rule objects to is allowed. Latency is bounded by the rule
    count, never by a model call, and is recorded on the trace row.
    """
    latency = max(1, len(policy.rules)) * GATE_RULE_COST_MS
    clock.advance(latency)
    for rule in policy.rules:
        reason = rule.check(action, context)
        if reason is not None:
            deny = GateDeny(rule.rule_id, reason, policy.policy_version, latency)
            if trace is not None:
                trace.emit(
                    request_id,
                    "control",
                    "gate",
                    {"decision": "deny", "rule_id": rule.rule_id, "reason": reason, "latency_ms": latency},
                    clock.now,
                    policy_version=policy.policy_version,
                )
            if audit is not None:
                audit.record(
                    request_id,
                    "gate",
                    "deny",
                    clock.now,
                    policy_version=policy.policy_version,
                    detail={"rule_id": rule.rule_id},
                )
            return deny
    if trace is not None:
        trace.emit(
            request_id,
            "control",
            "gate",
            {"decision": "allow", "latency_ms": latency},
            clock.now,
            policy_version=policy.policy_version,
        )
    return GateAllow(policy.policy_version, latency)


def rule_max_discount(cap: float, rule_id: str = "max_discount") -> GateRule:
    def check(action: dict[str, Any], context: dict[str, Any]) -> str | None:
        discount = action.get("discount_pct")
        if discount is not None and discount > cap:
            return f"discount {discount} exceeds cap {cap}"
        return None

    return GateRule(rule_id, check)


def rule_require_field(field_name: str, rule_id: str = "") -> GateRule:
    def check(action: dict[str, Any], context: dict[str, Any]) -> str | None:
        if field_name not in action:
            return f"missing required field {field_name!r}"
        return None

    return GateRule(rule_id or f"require_{field_name}", check)


def rule_forbid_state(state: str, rule_id: str = "") -> GateRule:
    def check(action: dict[str, Any], context: dict[str, Any]) -> str | None:
        if context.get("state") == state:
            return f"action forbidden in state {state!r}"
        return None

    return GateRule(rule_id or f"forbid_in_{state}", check)


# ---------------------------------------------------------------------------
# Kill switch


@dataclass
class CancellationToken:
    token_id: str
    revoked: bool = False
    revoked_at: int | None = None


def revoke(
    token: CancellationToken,
    *,
    clock: LogicalClock,
    audit: AuditTrail | None = None,
    request_id: str = "kill",
) -> bool:
    """Revoke a token. Monotone and idempotent; only the first call counts."""
    if token.revoked:
        return False
    token.revoked = True
    token.revoked_at = clock.now
    if audit is not None:
        audit.record(request_id, "kill", "revoked", clock.now, detail={"token_id": token.token_id})
    return True


@dataclass(frozen=True)
class Halted:
    revoked_at: int


def tool_call(
    request_id: str,
    token: CancellationToken | None,
    name: str,
    duration_ms: int,
    *,
    clock: LogicalClock,
    trace: TraceStore | None = None,
    fn: Callable[[], Any] | None = None,
) -> Any:
    """The tool boundary every worker must pass through.

    Checks the token before starting: a revoked token halts the step (and the
    halt is traced) rather than starting new work. In-flight calls are modeled
    as atomic here; their follow-on steps hit this boundary and halt. Workers
    that bypass this boundary are what the kill-switch-leak signature catches.
    """
    start = clock.now
    if token is not None and token.revoked:
        if trace is not None:
            trace.emit(
                request_id,
                "control",
                "halt",
                {"tool": name, "revoked_at": token.revoked_at},
                start,
            )
        return Halted(token.revoked_at or start)
    if trace is not None:
        trace.emit(
            request_id,
            "control",
            "tool_call",
            {"tool": name, "start": start, "latency_ms": duration_ms},
            start,
        )
    clock.advance(duration_ms)
    return fn() if fn is not None else None


# ---------------------------------------------------------------------------
# Escalation


@dataclass
class EscalationRecord:
    escalation_id: str
    row_id: str
    reason: str
    opened_at: int
    status: str = "open"  # "open" | "resolved"
    resolved_at: int | None = None
    next_state: str | None = None


class EscalationLedger:
    """Escalations move the state row to human_required and wait for a person.

    Escalating an already-escalated row is idempotent: the open record is
    returned and no second audit row is written.
    """

    def __init__(self, store: StateStore, audit: AuditTrail, trace: TraceStore | None = None) -> None:
        self.store = store
        self.audit = audit
        self.trace = trace
        self._by_id: dict[str, EscalationRecord] = {}
        self._open_by_row: dict[str, str] = {}
        self._seq = 0

    def escalate(self, row_id: str, reason: str, *, clock: LogicalClock) -> EscalationRecord:
        if row_id in self._open_by_row:
            return self._by_id[self._open_by_row[row_id]]
        row = self.store.get(row_id)
        if row.state != HUMAN_REQUIRED:
            # CAS from whatever version we just read; a concurrent transition
            # surfaces as Stale and we re-read. Bounded: versions only grow.
            for _ in range(8):
                result = self.store.cas_transition(row_id, row.version, HUMAN_REQUIRED, {"escalation_reason": reason}, clock=clock, actor="escalation")
                if isinstance(result, CasOk):
                    break
                row = self.store.get(row_id)
                if row.state == HUMAN_REQUIRED:
                    break
            else:
                raise RuntimeError(f"could not escalate row {row_id}: CAS kept losing")
        self._seq += 1
        record = EscalationRecord(f"esc-{self._seq:04d}", row_id, reason, clock.now)
        self._by_id[record.escalation_id] = record
        self._open_by_row[row_id] = record.escalation_id
        self.audit.record(row_id, "escalation", "escalated", clock.now, detail={"reason": reason})
        if self.trace is not None:
            self.trace.emit(row_id, "control", "escalation", {"escalation_id": record.escalation_id, "reason": reason}, clock.now)
        return record

    def resolve(self, escalation_id: str, next_state: str, *, clock: LogicalClock, resolver: str = "operator") -> EscalationRecord:
        record = self._by_id.get(escalation_id)
        if record is None:
            raise UnknownEscalation(escalation_id)
        if record.status == "resolved":
            raise AlreadyResolved(escalation_id)
        row = self.store.get(record.row_id)
        result = self.store.cas_transition(record.row_id, row.version, next_state, {"resolved_by": resolver}, clock=clock, actor="escalation_resolve")
        if not isinstance(result, CasOk):
            raise RuntimeError(f"resolution CAS lost for {record.row_id}")
        record.status = "resolved"
        record.resolved_at = clock.now
        record.next_state = next_state
        self._open_by_row.pop(record.row_id, None)
        self.audit.record(record.row_id, "escalation", "resolved", clock.now, detail={"next_state": next_state, "resolver": resolver})
        return record

    def pending(self) -> list[EscalationRecord]:
        return [self._by_id[eid] for eid in sorted(self._open_by_row.values())]

    def get(self, escalation_id: str) -> EscalationRecord:
        record = self._by_id.get(escalation_id)
        if record is None:
            raise UnknownEscalation(escalation_id)
        return record


# ---------------------------------------------------------------------------
# Approval


@dataclass
class ApprovalRequest:
    approval_id: str
    request_id: str
    action: dict[str, Any]
    opened_at: int
    sla_deadline: int

    def __post_init__(self) -> None:
        if self.sla_deadline <= self.opened_at:
            raise ValueError("SLA deadline must lie after opening time")


@dataclass(frozen=True)
class Resolution:
    decision: str  # "approved" | "denied" | "sla_expired_denied"
    resolver: str
    resolved_at: int


class ApprovalLedger:
    """Single-resolution approval registry with SLA expiry.

    A request resolves exactly once. Expiry is inclusive: a request still
    pending when the clock reaches its deadline resolves to
    sla_expired_denied with resolver "fallback".
    """

    def __init__(self, audit: AuditTrail, trace: TraceStore | None = None) -> None:
        self.audit = audit
        self.trace = trace
        self._requests: dict[str, ApprovalRequest] = {}
        self._resolutions: dict[str, Resolution] = {}

    def open(self, request: ApprovalRequest) -> ApprovalRequest:
        if request.approval_id in self._requests:
            raise ValueError(f"duplicate approval id: {request.approval_id}")
        self._requests[request.approval_id] = request
        if self.trace is not None:
            self.trace.emit(
                request.request_id,
                "control",
                "approval",
                {"approval_id": request.approval_id, "event": "opened", "sla_deadline": request.sla_deadline},
                request.opened_at,
            )
        return request

    def resolve(self, approval_id: str, decision: str, *, clock: LogicalClock, resolver: str) -> Resolution:
        if decision not in ("approved", "denied"):
            raise ValueError(f"operator decisions are approved/denied, got {decision!r}")
        request = self._requests.get(approval_id)
        if request is None:
            raise UnknownApproval(approval_id)
        if approval_id in self._resolutions:
            raise AlreadyResolved(approval_id)
        if clock.now >= request.sla_deadline:
            # Too late: the fallback owns this one now.
            self.expire_due(clock=clock)
            return self._resolutions[approval_id]
        resolution = Resolution(decision, resolver, clock.now)
        self._record(request, resolution)
        return resolution

    def expire_due(self, *, clock: LogicalClock) -> list[Resolution]:
        """Resolve every pending request whose deadline has arrived."""
        out = []
        for approval_id in sorted(self._requests):
            request = self._requests[approval_id]
            if approval_id in self._resolutions or clock.now < request.sla_deadline:
                continue
            resolution = Resolution("sla_expired_denied", "fallback", request.sla_deadline)
            self._record(request, resolution)
            out.append(resolution)
        return out

    def _record(self, request: ApprovalRequest, resolution: Resolution) -> None:
        self._resolutions[request.approval_id] = resolution
        self.audit.record(
            request.request_id,
            "approval",
            resolution.decision,
            resolution.resolved_at,
            detail={"approval_id": request.approval_id, "resolver": resolution.resolver},
        )
        if self.trace is not None:
            self.trace.emit(
                request.request_id,
                "control",
                "approval",
                {
                    "approval_id": request.approval_id,
                    "event": "resolved",
                    "decision": resolution.decision,
                    "resolver": resolution.resolver,
                },
                resolution.resolved_at,
            )

    def resolution(self, approval_id: str) -> Resolution | None:
        if approval_id not in self._requests:
            raise UnknownApproval(approval_id)
        return self._resolutions.get(approval_id)

    def pending(self, now: int) -> list[dict[str, Any]]:
        out = []
        for approval_id in sorted(self._requests):
            if approval_id in self._resolutions:
                continue
            request = self._requests[approval_id]
            out.append(
                {
                    "approval_id": approval_id,
                    "request_id": request.request_id,
                    "action": request.action,
                    "opened_at": request.opened_at,
                    "sla_deadline": request.sla_deadline,
                    "remaining_ms": max(0, request.sla_deadline - now),
                }
            )
        return out


def await_approval(
    request: ApprovalRequest,
    ledger: ApprovalLedger,
    *,
    clock: LogicalClock,
    resolution_source: Callable[[ApprovalRequest], tuple[str, str, int] | None],
) -> Resolution:
    """Synchronous form: ask the source for (decision, resolver, at_time).

    The source returning None, or a time past the deadline, means nobody
    answered in time: the clock advances to the deadline and the request
    expires to sla_expired_denied.
    """
    if request.approval_id not in ledger._requests:
        ledger.open(request)
    answer = resolution_source(request)
    if answer is not None:
        decision, resolver, at = answer
        if at < request.sla_deadline:
            clock.advance_to(at)
            return ledger.resolve(request.approval_id, decision, clock=clock, resolver=resolver)
    clock.advance_to(request.sla_deadline)
    ledger.expire_due(clock=clock)
    resolution = ledger.resolution(request.approval_id)
    assert resolution is not None
    return resolution


# ---------------------------------------------------------------------------
# Throttling


@dataclass(frozen=True)
class ThrottleCaps:
    per_minute: int
    per_day: int

    def __post_init__(self) -> None:
        if self.per_minute < 1 or self.per_day < 1:
            raise ValueError("caps must be >= 1")


@dataclass(frozen=True)
class Admitted:
    remaining_minute: int
    remaining_day: int


@dataclass(frozen=True)
class Refused:
    retry_at: int
    window: str  # "minute" | "day"


class Throttle:
    """Sliding-window admission counter per scope key.

    A window holds admissions with time > now - window_size; the (cap+1)-th
    admission inside any window is refused and audited.
    """

    MINUTE = 60_000
    DAY = 86_400_000

    def __init__(self, caps: ThrottleCaps, audit: AuditTrail | None = None, trace: TraceStore | None = None) -> None:
        self.caps = caps
        self.audit = audit
        self.trace = trace
        self._admissions: dict[str, list[int]] = {}
        self._scope_caps: dict[str, ThrottleCaps] = {}

    def set_caps(self, caps: ThrottleCaps, scope_key: str | None = None) -> None:
        if scope_key is None:
            self.caps = caps
        else:
            self._scope_caps[scope_key] = caps

    def caps_for(self, scope_key: str) -> ThrottleCaps:
        return self._scope_caps.get(scope_key, self.caps)

    def admit(self, scope_key: str, *, clock: LogicalClock, request_id: str = "") -> Admitted | Refused:
        now = clock.now
        caps = self.caps_for(scope_key)
        times = self._admissions.setdefault(scope_key, [])
        # Prune anything outside the day window; the minute window is a suffix.
        while times and times[0] <= now - self.DAY:
            times.pop(0)
        in_day = len(times)
        in_minute = sum(1 for t in times if t > now - self.MINUTE)

        rid = request_id or scope_key
        if in_minute >= caps.per_minute or in_day >= caps.per_day:
            if in_day >= caps.per_day:
                window = "day"
                oldest = times[0]
                retry_at = oldest + self.DAY
            else:
                window = "minute"
                minute_times = [t for t in times if t > now - self.MINUTE]
                retry_at = minute_times[0] + self.MINUTE
            if self.audit is not None:
                self.audit.record(rid, "throttle", "refused", now, detail={"scope": scope_key, "window": window})
            if self.trace is not None:
                self.trace.emit(
                    rid,
                    "control",
                    "throttle",
                    {"decision": "refused", "scope": scope_key, "window": window, "retry_at": retry_at},
                    now,
                )
            return Refused(retry_at, window)

        times.append(now)
        if self.trace is not None:
            self.trace.emit(
                rid,
                "control",
                "throttle",
                {"decision": "admitted", "scope": scope_key},
                now,
            )
        return Admitted(caps.per_minute - in_minute - 1, caps.per_day - in_day - 1)


# ---------------------------------------------------------------------------
# Plane declaration


@dataclass(frozen=True)
class Deferral:
    date: str
    rationale: str

    def __post_init__(self) -> None:
        if not self.date or not self.rationale:
            raise ValueError("a deferral needs both a date and a rationale")


@dataclass(frozen=True)
class PlaneDeclaration:
    enabled: frozenset[str]
    deferred: dict[str, Deferral] = field(default_factory=dict)

    def validate(self) -> None:
        unknown = (set(self.enabled) | set(self.deferred)) - set(PLANES)
        if unknown:
            raise MissingPlaneDeclaration(f"unknown planes: {sorted(unknown)}")
        overlap = set(self.enabled) & set(self.deferred)
        if overlap:
            raise MissingPlaneDeclaration(f"planes both enabled and deferred: {sorted(overlap)}")
        missing = set(PLANES) - set(self.enabled) - set(self.deferred)
        if missing:
            raise MissingPlaneDeclaration(
                f"planes neither enabled nor deferred with a dated rationale: {sorted(missing)}"
            )


ALL_PLANES_ENABLED = PlaneDeclaration(enabled=frozenset(PLANES))


@dataclass
class ControlPlanes:
    """The P6 bundle a workflow runs under. Refuses to start when any plane
    is left undeclared; using a deferred plane raises."""

    declaration: PlaneDeclaration
    token: CancellationToken
    escalations: EscalationLedger
    approvals: ApprovalLedger
    throttle: Throttle

    def __post_init__(self) -> None:
        self.declaration.validate()

    def require(self, plane: str) -> None:
        if plane not in PLANES:
            raise MissingPlaneDeclaration(f"unknown plane: {plane!r}")
        if plane in self.declaration.deferred:
            deferral = self.declaration.deferred[plane]
            raise PlaneDeferred(f"plane {plane!r} deferred since {deferral.date}: {deferral.rationale}")
