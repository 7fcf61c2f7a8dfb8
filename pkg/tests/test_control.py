"""Control planes: supervision, gate, kill switch, escalation, approval,
throttling, and the declaration that refuses to run without all four."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from agentrt.clock import LogicalClock
from agentrt.control import (
    ALL_PLANES_ENABLED,
    GATE_RULE_COST_MS,
    PLANES,
    AlreadyResolved,
    ApprovalLedger,
    ApprovalRequest,
    CancellationToken,
    Completed,
    ControlPlanes,
    Deferral,
    Escalated,
    EscalationLedger,
    GateAllow,
    GateDeny,
    GatePolicy,
    Halted,
    MissingPlaneDeclaration,
    PlaneDeclaration,
    PlaneDeferred,
    Admitted,
    Refused,
    Resolution,
    SupervisorSpec,
    Throttle,
    ThrottleCaps,
    UnknownApproval,
    UnknownEscalation,
    await_approval,
    gate_check,
    revoke,
    rule_forbid_state,
    rule_max_discount,
    rule_require_field,
    supervise,
    tool_call,
)
from agentrt.statestore import HUMAN_REQUIRED, StateStore
from agentrt.trace import AuditTrail, TraceStore

from .oracles import throttle_decision

SPEC = SupervisorSpec(max_restarts=3, backoff_base_ms=500, backoff_factor=2.0)


# -- supervision


def test_backoff_is_exact_exponential():
    assert [SPEC.backoff_ms(n) for n in (1, 2, 3, 4)] == [500, 1000, 2000, 4000]


def test_child_success_needs_no_restart(clock, trace):
    result = supervise("r", lambda attempt: "done", SPEC, clock=clock, trace=trace)
    assert result == Completed("done", 0)
    assert clock.now == 0
    assert trace.rows() == []


def test_crashes_then_recovery(clock, trace, audit):
    def child(attempt):
        if attempt < 2:
            raise RuntimeError("flaky io")
        return attempt

    result = supervise("r", child, SPEC, clock=clock, trace=trace, audit=audit)
    assert result == Completed(2, 2)
    restarts = [r for r in trace.rows() if r.kind == "restart"]
    assert [r.payload["delay_ms"] for r in restarts] == [500, 1000]
    assert clock.now == 1500
    assert [a.decision for a in audit.records("supervisor")] == ["restart_1", "restart_2"]
    assert all("flaky io" in r.payload["crash_reason"] for r in restarts)


def test_budget_exhaustion_escalates(clock, trace, audit):
    def child(attempt):
        raise ValueError("always broken")

    result = supervise("r", child, SPEC, clock=clock, trace=trace, audit=audit)
    assert isinstance(result, Escalated)
    assert result.restarts == SPEC.max_restarts
    assert len([r for r in trace.rows() if r.kind == "restart"]) == SPEC.max_restarts
    escalations = audit.records("escalation")
    assert len(escalations) == 1 and escalations[0].decision == "supervisor_escalated"
    trace_escalations = [r for r in trace.rows() if r.kind == "escalation"]
    assert len(trace_escalations) == 1 and trace_escalations[0].payload["source"] == "supervisor"


def test_supervisor_spec_validation():
    with pytest.raises(ValueError):
        SupervisorSpec(max_restarts=-1, backoff_base_ms=1, backoff_factor=2.0)
    with pytest.raises(ValueError):
        SupervisorSpec(max_restarts=1, backoff_base_ms=1, backoff_factor=2.0, strategy="all_for_one")


# -- policy gate


def policy(cap=0.3):
    return GatePolicy("pricing-v1", (rule_require_field("customer_ref"), rule_max_discount(cap)))


def test_gate_allow_costs_rule_count(clock, trace):
    result = gate_check("r", {"customer_ref": "c", "discount_pct": 0.1}, {}, policy(), clock=clock, trace=trace)
    assert isinstance(result, GateAllow)
    assert result.latency_ms == 2 * GATE_RULE_COST_MS
    assert clock.now == 2 * GATE_RULE_COST_MS
    assert trace.rows()[0].payload["decision"] == "allow"


def test_gate_deny_names_first_violated_rule(clock, trace, audit):
    action = {"discount_pct": 0.9}  # violates both rules; order decides
    result = gate_check("r", action, {}, policy(), clock=clock, trace=trace, audit=audit)
    assert isinstance(result, GateDeny)
    assert result.rule_id == "require_customer_ref"
    assert result.policy_version == "pricing-v1"
    denies = audit.records("gate")
    assert len(denies) == 1 and denies[0].decision == "deny"
    audit_row = [r for r in trace.rows() if r.kind == "audit"][0]
    assert audit_row.payload["detail"] == {"rule_id": "require_customer_ref"}


def test_gate_latency_charged_even_on_deny(clock):
    gate_check("r", {}, {}, policy(), clock=clock)
    assert clock.now == 2 * GATE_RULE_COST_MS


def test_duplicate_rule_ids_rejected():
    with pytest.raises(ValueError):
        GatePolicy("v", (rule_max_discount(0.3), rule_max_discount(0.2)))


def test_bundled_rules():
    assert rule_max_discount(0.3).check({"discount_pct": 0.4}, {}) is not None
    assert rule_max_discount(0.3).check({"discount_pct": 0.3}, {}) is None
    assert rule_max_discount(0.3).check({}, {}) is None
    assert rule_require_field("x").check({}, {}) is not None
    assert rule_forbid_state("closed").check({}, {"state": "closed"}) is not None
    assert rule_forbid_state("closed").check({}, {"state": "open"}) is None


# -- kill switch


def test_revoke_is_idempotent(clock, trace, audit):
    token = CancellationToken("t")
    clock.advance(250)
    assert revoke(token, clock=clock, audit=audit) is True
    assert revoke(token, clock=clock, audit=audit) is False
    assert token.revoked_at == 250
    assert len(audit.records("kill")) == 1


def test_tool_call_runs_when_token_live(clock, trace):
    token = CancellationToken("t")
    result = tool_call("r", token, "send_email", 250, clock=clock, trace=trace, fn=lambda: "sent")
    assert result == "sent"
    assert clock.now == 250
    assert trace.rows()[0].kind == "tool_call"


def test_tool_call_halts_after_revoke_without_burning_time(clock, trace, audit):
    token = CancellationToken("t")
    clock.advance(100)
    revoke(token, clock=clock, audit=audit)
    result = tool_call("r", token, "send_email", 250, clock=clock, trace=trace)
    assert result == Halted(100)
    assert clock.now == 100  # the halted step consumed nothing
    halts = [r for r in trace.rows() if r.kind == "halt"]
    assert len(halts) == 1 and halts[0].payload["revoked_at"] == 100


# -- escalation


def esc_fixture():
    trace = TraceStore()
    audit = AuditTrail(trace)
    store = StateStore({"open", "working", HUMAN_REQUIRED}, transitions={"open": {"working"}, "working": set(), HUMAN_REQUIRED: {"working"}}, trace=trace, audit=audit)
    store.create_row("rnw-1", "open")
    return trace, audit, store, EscalationLedger(store, audit, trace)


def test_escalation_moves_row_to_human_lane(clock):
    trace, audit, store, ledger = esc_fixture()
    record = ledger.escalate("rnw-1", "merger_notice", clock=clock)
    assert store.get("rnw-1").state == HUMAN_REQUIRED
    assert record.status == "open"
    assert [a.decision for a in audit.records("escalation")] == ["escalated"]


def test_escalation_is_idempotent_per_row(clock):
    trace, audit, store, ledger = esc_fixture()
    first = ledger.escalate("rnw-1", "merger_notice", clock=clock)
    second = ledger.escalate("rnw-1", "merger_notice again", clock=clock)
    assert first.escalation_id == second.escalation_id
    assert len(audit.records("escalation")) == 1


def test_escalation_resolution_applies_next_state(clock):
    trace, audit, store, ledger = esc_fixture()
    record = ledger.escalate("rnw-1", "odd case", clock=clock)
    resolved = ledger.resolve(record.escalation_id, "working", clock=clock, resolver="ops")
    assert resolved.status == "resolved"
    assert store.get("rnw-1").state == "working"
    assert ledger.pending() == []
    assert [a.decision for a in audit.records("escalation")] == ["escalated", "resolved"]


def test_escalation_resolution_guards(clock):
    trace, audit, store, ledger = esc_fixture()
    with pytest.raises(UnknownEscalation):
        ledger.resolve("esc-9999", "working", clock=clock)
    record = ledger.escalate("rnw-1", "x", clock=clock)
    ledger.resolve(record.escalation_id, "working", clock=clock)
    with pytest.raises(AlreadyResolved):
        ledger.resolve(record.escalation_id, "working", clock=clock)


# -- approval


def approval(deadline=10_000, opened=0, approval_id="apr-1"):
    return ApprovalRequest(approval_id, "rnw-1", {"discount_pct": 0.2}, opened, deadline)


def test_approval_deadline_must_follow_opening():
    with pytest.raises(ValueError):
        ApprovalRequest("a", "r", {}, 100, 100)


def test_duplicate_approval_id_rejected(audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval())
    with pytest.raises(ValueError):
        ledger.open(approval())


def test_operator_resolution_before_deadline(clock, audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval())
    clock.advance(5_000)
    resolution = ledger.resolve("apr-1", "approved", clock=clock, resolver="alex")
    assert resolution == Resolution("approved", "alex", 5_000)
    assert [a.decision for a in audit.records("approval")] == ["approved"]


def test_only_approved_or_denied_are_operator_decisions(clock, audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval())
    with pytest.raises(ValueError):
        ledger.resolve("apr-1", "sla_expired_denied", clock=clock, resolver="alex")
    with pytest.raises(UnknownApproval):
        ledger.resolve("ghost", "approved", clock=clock, resolver="alex")


def test_double_resolution_rejected(clock, audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval())
    ledger.resolve("apr-1", "denied", clock=clock, resolver="alex")
    with pytest.raises(AlreadyResolved):
        ledger.resolve("apr-1", "approved", clock=clock, resolver="alex")


def test_expiry_is_inclusive_at_the_deadline(clock, audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval(deadline=10_000))
    clock.advance(10_000)
    expired = ledger.expire_due(clock=clock)
    assert [e.decision for e in expired] == ["sla_expired_denied"]
    assert expired[0].resolver == "fallback"
    assert expired[0].resolved_at == 10_000


def test_late_operator_answer_loses_to_the_deadline(clock, audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval(deadline=10_000))
    clock.advance(12_000)
    resolution = ledger.resolve("apr-1", "approved", clock=clock, resolver="alex")
    assert resolution.decision == "sla_expired_denied"
    assert [a.decision for a in audit.records("approval")] == ["sla_expired_denied"]


def test_pending_reports_remaining_time(clock, audit):
    ledger = ApprovalLedger(audit)
    ledger.open(approval(deadline=10_000))
    clock.advance(4_000)
    pending = ledger.pending(clock.now)
    assert len(pending) == 1
    assert pending[0]["remaining_ms"] == 6_000
    ledger.resolve("apr-1", "approved", clock=clock, resolver="a")
    assert ledger.pending(clock.now) == []


def test_await_approval_answered_in_time(clock, audit):
    ledger = ApprovalLedger(audit)
    resolution = await_approval(
        approval(deadline=10_000), ledger, clock=clock, resolution_source=lambda req: ("approved", "alex", 3_000)
    )
    assert resolution.decision == "approved"
    assert clock.now == 3_000


def test_await_approval_silence_expires(clock, audit):
    ledger = ApprovalLedger(audit)
    resolution = await_approval(
        approval(deadline=10_000), ledger, clock=clock, resolution_source=lambda req: None
    )
    assert resolution.decision == "sla_expired_denied"
    assert clock.now == 10_000


# -- throttling


def test_minute_cap_refuses_and_names_retry_time(clock, trace, audit):
    throttle = Throttle(ThrottleCaps(per_minute=2, per_day=100), audit, trace)
    assert isinstance(throttle.admit("acct", clock=clock), Admitted)
    clock.advance(1_000)
    assert isinstance(throttle.admit("acct", clock=clock), Admitted)
    clock.advance(1_000)
    refused = throttle.admit("acct", clock=clock)
    assert isinstance(refused, Refused)
    assert refused.window == "minute"
    assert refused.retry_at == 0 + Throttle.MINUTE  # the oldest admission ages out first
    assert [a.decision for a in audit.records("throttle")] == ["refused"]
    clock.advance_to(refused.retry_at + 1)
    assert isinstance(throttle.admit("acct", clock=clock), Admitted)


def test_day_cap_wins_over_minute_cap(clock, audit):
    throttle = Throttle(ThrottleCaps(per_minute=10, per_day=2), audit)
    throttle.admit("acct", clock=clock)
    clock.advance(5)
    throttle.admit("acct", clock=clock)
    clock.advance(5)
    refused = throttle.admit("acct", clock=clock)
    assert isinstance(refused, Refused) and refused.window == "day"
    assert refused.retry_at == 0 + Throttle.DAY


def test_remaining_counts_in_admission(clock):
    throttle = Throttle(ThrottleCaps(per_minute=3, per_day=10))
    admitted = throttle.admit("acct", clock=clock)
    assert (admitted.remaining_minute, admitted.remaining_day) == (2, 9)


def test_scope_caps_override_defaults(clock):
    throttle = Throttle(ThrottleCaps(per_minute=1, per_day=10))
    throttle.set_caps(ThrottleCaps(per_minute=5, per_day=10), scope_key="vip")
    throttle.admit("vip", clock=clock)
    clock.advance(1)
    assert isinstance(throttle.admit("vip", clock=clock), Admitted)
    throttle.admit("std", clock=clock)
    clock.advance(1)
    assert isinstance(throttle.admit("std", clock=clock), Refused)


def test_caps_validation():
    with pytest.raises(ValueError):
        ThrottleCaps(0, 10)
    with pytest.raises(ValueError):
        ThrottleCaps(5, 0)


@given(gaps=st.lists(st.integers(min_value=0, max_value=90_000), min_size=1, max_size=120))
def test_throttle_matches_sliding_window_oracle(gaps):
    clock = LogicalClock()
    throttle = Throttle(ThrottleCaps(per_minute=4, per_day=30))
    admitted_times: list[int] = []
    for gap in gaps:
        clock.advance(gap)
        want, want_window = throttle_decision(admitted_times, clock.now, 4, 30)
        got = throttle.admit("scope", clock=clock)
        if want == "admit":
            assert isinstance(got, Admitted)
            admitted_times.append(clock.now)
        else:
            assert isinstance(got, Refused)
            assert got.window == want_window


# -- plane declaration


def test_declaration_requires_every_plane_accounted_for():
    with pytest.raises(MissingPlaneDeclaration):
        PlaneDeclaration(enabled=frozenset({"kill_switch"})).validate()
    with pytest.raises(MissingPlaneDeclaration):
        PlaneDeclaration(enabled=frozenset({"not_a_plane", *PLANES})).validate()
    deferred = {p: Deferral("2026-01-01", "low stakes pilot") for p in PLANES[1:]}
    PlaneDeclaration(enabled=frozenset(PLANES[:1]), deferred=deferred).validate()


def test_deferred_plane_raises_on_use(clock, trace, audit):
    store = StateStore({HUMAN_REQUIRED, "open"}, trace=trace, audit=audit)
    planes = ControlPlanes(
        declaration=PlaneDeclaration(
            enabled=frozenset(PLANES) - {"throttling"},
            deferred={"throttling": Deferral("2026-03-01", "single tenant, no burst risk")},
        ),
        token=CancellationToken("t"),
        escalations=EscalationLedger(store, audit, trace),
        approvals=ApprovalLedger(audit, trace),
        throttle=Throttle(ThrottleCaps(1, 1)),
    )
    planes.require("kill_switch")
    with pytest.raises(PlaneDeferred):
        planes.require("throttling")
    assert ALL_PLANES_ENABLED.deferred == {}
