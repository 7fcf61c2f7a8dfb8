"""Fan-out/fan-in: deterministic merge, delegation, and saga compensation."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from agentrt.clock import LogicalClock
from agentrt.coordination import (
    REQUIRE_ALL,
    best_effort,
    CompensationFailed,
    DelegationIncomplete,
    MergeConflict,
    PeerAction,
    SeededScheduler,
    SimExternalStore,
    SubAgent,
    SubTaskContract,
    delegate,
    merge,
    redeliver_compensation,
    rule_highest_weight,
    rule_prefer,
    scatter_gather,
)
from agentrt.trace import AuditTrail, TraceStore

from .oracles import compensation_order, completion_tick_by_step


# -- merge


def test_identical_values_merge_without_conflict():
    result = merge(
        {"a": {"x": 1}, "b": {"x": 1}},
        weights={"a": 1.0, "b": 2.0},
        rules=[rule_highest_weight()],
    )
    assert result.merged == {"x": 1}
    assert result.conflicts == []
    assert result.contributions == {"x": "b"}  # heavier agent takes credit on a tie


def test_first_applicable_rule_wins():
    rules = [rule_prefer("a", fields=frozenset({"y"})), rule_highest_weight()]
    result = merge(
        {"a": {"x": 1, "y": 10}, "b": {"x": 2, "y": 20}},
        weights={"a": 1.0, "b": 5.0},
        rules=rules,
    )
    assert result.merged == {"x": 2, "y": 10}
    assert {(c["field"], c["rule"]) for c in result.conflicts} == {
        ("x", "highest_weight"),
        ("y", "prefer_a"),
    }


def test_prefer_rule_scoped_to_fields():
    rule = rule_prefer("a", fields=frozenset({"y"}))
    assert rule.resolver("x", {"a": 1, "b": 2}, {}) is None
    assert rule.resolver("y", {"a": 1, "b": 2}, {}) == "a"
    unscoped = rule_prefer("a")
    assert unscoped.resolver("anything", {"a": 1}, {}) == "a"
    assert unscoped.resolver("x", {"b": 2}, {}) is None


def test_unresolvable_field_raises():
    with pytest.raises(MergeConflict):
        merge({"a": {"x": 1}, "b": {"x": 2}}, weights={"a": 1.0, "b": 1.0}, rules=[])


def test_rule_naming_a_non_contender_raises():
    rule = rule_prefer("c")  # c never produced the field
    with pytest.raises(MergeConflict):
        merge({"a": {"x": 1}, "b": {"x": 2}}, weights={"a": 1, "b": 1, "c": 1}, rules=[rule])


@given(
    values=st.dictionaries(
        st.sampled_from(["a", "b", "c"]),
        st.dictionaries(st.sampled_from(["x", "y"]), st.integers(0, 3), min_size=1),
        min_size=1,
    )
)
def test_merge_ignores_input_ordering(values):
    weights = {name: float(i + 1) for i, name in enumerate(sorted(values))}
    rules = [rule_highest_weight()]
    forward = merge(dict(sorted(values.items())), weights=weights, rules=rules)
    backward = merge(dict(sorted(values.items(), reverse=True)), weights=weights, rules=rules)
    assert forward.merged == backward.merged
    assert forward.conflicts == backward.conflicts


# -- delegation


def contract(deadline_ms=10_000, retry_budget=0, policy=REQUIRE_ALL):
    return SubTaskContract(
        input_type="task",
        output_type="fragment",
        deadline_ms=deadline_ms,
        retry_budget=retry_budget,
        partial_result_policy=policy,
    )


def run_delegate(agents, contracts, clock=None, trace=None, weights=None):
    clock = clock or LogicalClock()
    return delegate(
        "req-1",
        {"kind": "demo"},
        list(agents),
        contracts,
        weights=weights or {a.name: 1.0 for a in agents},
        rules=[rule_highest_weight()],
        clock=clock,
        scheduler=SeededScheduler(seed=3),
        trace=trace,
    )


def test_delegate_merges_peer_fragments(trace):
    agents = (
        SubAgent("alpha", lambda task, attempt: {"x": 1}),
        SubAgent("beta", lambda task, attempt: {"y": 2}),
    )
    result = run_delegate(agents, {a.name: contract() for a in agents}, trace=trace)
    assert result.merged == {"x": 1, "y": 2}
    merges = [r for r in trace.rows() if r.kind == "merge"]
    assert len(merges) == 1
    assert set(merges[0].payload["weights"]) == {"alpha", "beta"}


def test_delegate_clock_lands_on_slowest_peer():
    clock = LogicalClock()
    agents = (
        SubAgent("alpha", lambda task, attempt: {"x": 1}),
        SubAgent("beta", lambda task, attempt: {"y": 2}),
    )
    scheduler = SeededScheduler(seed=3)
    expected_end = max(
        scheduler.duration("req-1", "alpha", 0),
        scheduler.duration("req-1", "beta", 0),
    )
    run_delegate(agents, {a.name: contract() for a in agents}, clock=clock)
    assert clock.now == expected_end


def test_sub_agents_cannot_carry_their_own_retry_budget():
    agent = SubAgent("alpha", lambda task, attempt: {})
    assert agent.internal_retry_budget == 0
    with pytest.raises(TypeError):
        SubAgent("beta", lambda task, attempt: {}, internal_retry_budget=2)  # type: ignore[call-arg]


def test_parent_owned_retries_are_each_traced(trace):
    def flaky(task, attempt):
        if attempt < 2:
            raise RuntimeError("transient")
        return {"x": 1}

    agents = (SubAgent("alpha", flaky),)
    result = run_delegate(agents, {"alpha": contract(retry_budget=2)}, trace=trace)
    assert result.merged == {"x": 1}
    dispatches = [r for r in trace.rows() if r.kind == "dispatch"]
    assert [d.payload["attempt"] for d in dispatches] == [0, 1, 2]
    failures = [r for r in trace.rows() if r.kind == "sub_result" and not r.payload["ok"]]
    assert len(failures) == 2


def test_retry_past_deadline_is_flagged(trace):
    def slow_flaky(task, attempt):
        if attempt == 0:
            raise RuntimeError("first shot fails")
        return {"x": 1}

    agents = (SubAgent("alpha", slow_flaky),)
    # deadline below the smallest possible duration forces the retry to start late
    run_delegate(agents, {"alpha": contract(deadline_ms=1, retry_budget=1)}, trace=trace)
    late = [r for r in trace.rows() if r.kind == "retry_after_deadline"]
    assert len(late) == 1
    assert late[0].payload["agent"] == "alpha"
    assert late[0].payload["start"] > late[0].payload["deadline"]


def test_exhausted_peer_fails_strict_delegation():
    agents = (
        SubAgent("alpha", lambda task, attempt: {"x": 1}),
        SubAgent("beta", lambda task, attempt: (_ for _ in ()).throw(RuntimeError("dead"))),
    )
    with pytest.raises(DelegationIncomplete) as exc:
        run_delegate(agents, {a.name: contract() for a in agents})
    assert exc.value.successes == {"alpha": {"x": 1}}
    assert set(exc.value.failures) == {"beta"}


def test_best_effort_accepts_quorum():
    agents = (
        SubAgent("alpha", lambda task, attempt: {"x": 1}),
        SubAgent("beta", lambda task, attempt: (_ for _ in ()).throw(RuntimeError("dead"))),
    )
    contracts = {a.name: contract(policy=best_effort(min_peers=1)) for a in agents}
    result = run_delegate(agents, contracts)
    assert result.merged == {"x": 1}


def test_mixed_policies_take_the_strictest():
    agents = (
        SubAgent("alpha", lambda task, attempt: {"x": 1}),
        SubAgent("beta", lambda task, attempt: (_ for _ in ()).throw(RuntimeError("dead"))),
    )
    contracts = {
        "alpha": contract(policy=best_effort(min_peers=1)),
        "beta": contract(policy=REQUIRE_ALL),
    }
    with pytest.raises(DelegationIncomplete):
        run_delegate(agents, contracts)


def test_scheduler_durations_bounded_and_reproducible():
    a = SeededScheduler(seed=9, min_ms=20, max_ms=400)
    b = SeededScheduler(seed=9, min_ms=20, max_ms=400)
    durations = [a.duration("scope", f"peer{i}", 0) for i in range(50)]
    assert durations == [b.duration("scope", f"peer{i}", 0) for i in range(50)]
    assert all(20 <= d <= 400 for d in durations)


# -- scatter/gather sagas


def write_peer(name, store, key, value):
    def act(session):
        session.write(store, key, value)
        return {"key": key}

    return PeerAction(name, act)


def run_gather(peers, stores, policy=REQUIRE_ALL, trace=None, audit=None, clock=None):
    trace = trace if trace is not None else TraceStore()
    return scatter_gather(
        "req-1",
        "saga-1",
        list(peers),
        policy,
        list(stores),
        clock=clock or LogicalClock(),
        scheduler=SeededScheduler(seed=11),
        trace=trace,
        audit=audit or AuditTrail(trace),
    )


def test_all_peers_commit(trace):
    crm, billing = SimExternalStore("crm"), SimExternalStore("billing")
    result = run_gather(
        (write_peer("a", crm, "k1", 1), write_peer("b", billing, "k2", 2)),
        (crm, billing),
        trace=trace,
    )
    assert result.status == "ok"
    assert crm.state == {"k1": 1} and billing.state == {"k2": 2}
    assert result.compensated_steps == []
    writes = [r for r in trace.rows() if r.kind == "peer_write"]
    assert len(writes) == 2


def test_partial_failure_rolls_everything_back(trace, audit):
    crm, billing = SimExternalStore("crm"), SimExternalStore("billing")
    crm.write("k1", "original", saga_id="setup", step_index=0)
    billing.inject_failure("k2", times=1)

    def writes_then_fails(session):
        session.write(crm, "k1", "overwritten")
        session.write(billing, "k2", "never lands")
        return {}

    result = run_gather(
        (PeerAction("risky", writes_then_fails), write_peer("safe", crm, "k3", 3)),
        (crm, billing),
        trace=trace,
        audit=audit,
    )
    assert result.status == "compensated"
    assert result.stores_clean is True
    assert crm.state == {"k1": "original"}  # k3 rolled back, k1 restored
    assert "k2" not in billing.state
    assert audit.records("escalation") == []


def test_compensation_runs_failed_step_first_then_reverse_completion():
    stores = [SimExternalStore(f"s{i}") for i in range(3)]
    stores[2].inject_failure("bad", times=1)

    def failing(session):
        session.write(stores[2], "pre", 1)  # lands, must be undone
        session.write(stores[2], "bad", 2)
        return {}

    peers = (
        write_peer("p0", stores[0], "a", 1),
        write_peer("p1", stores[1], "b", 2),
        PeerAction("boom", failing),
    )
    trace_store = TraceStore()
    result = run_gather(peers, tuple(stores), trace=trace_store)
    assert result.status == "compensated"

    order = compensation_order(trace_store.rows(), "saga-1")
    ticks = completion_tick_by_step(trace_store.rows(), "saga-1", ["p0", "p1", "boom"])
    assert set(ticks) == {0, 1}  # the failed peer never completed
    completed_expected = [s for s, _ in sorted(ticks.items(), key=lambda kv: (kv[1], kv[0]), reverse=True)]
    observed_steps = []
    for step, _ in order:
        if step not in observed_steps:
            observed_steps.append(step)
    assert observed_steps == [2] + completed_expected  # failed step unwinds first
    # within the failed step, writes unwind newest first
    boom_subs = [sub for step, sub in order if step == 2]
    assert boom_subs == sorted(boom_subs, reverse=True)


def test_redelivered_compensation_is_deduplicated():
    crm = SimExternalStore("crm")
    crm.inject_failure("k2", times=1)

    def partial(session):
        session.write(crm, "k1", 1)
        session.write(crm, "k2", 2)
        return {}

    trace_store = TraceStore()
    clock = LogicalClock()
    result = run_gather((PeerAction("p", partial),), (crm,), trace=trace_store, clock=clock)
    assert result.status == "compensated"
    first_pass = [r.payload["outcome"] for r in trace_store.rows() if r.kind == "compensation"]
    assert first_pass == ["applied", "applied"]  # k2's undo was registered before the write failed

    for entry in result.saga_log:
        redeliver_compensation("saga-1", entry, "req-1", clock, trace_store)
    outcomes = [r.payload["outcome"] for r in trace_store.rows() if r.kind == "compensation"]
    assert outcomes == ["applied", "applied", "duplicate", "duplicate"]
    assert crm.state == {}


def test_lossy_compensation_escalates(trace, audit):
    crm = SimExternalStore("crm")
    crm.lossy_compensation = True
    billing = SimExternalStore("billing")
    billing.inject_failure("k2", times=1)

    def partial(session):
        session.write(crm, "k1", 1)
        session.write(billing, "k2", 2)
        return {}

    result = run_gather((PeerAction("p", partial),), (crm, billing), trace=trace, audit=audit)
    assert result.status == "compensated"
    assert result.stores_clean is False
    unclean = audit.records("escalation")
    assert len(unclean) == 1 and unclean[0].decision == "unclean_after_compensation"


def test_best_effort_gather_reports_partial():
    crm = SimExternalStore("crm")
    crm.inject_failure("bad", times=1)
    peers = (
        write_peer("ok1", crm, "a", 1),
        write_peer("ok2", crm, "b", 2),
        write_peer("boom", crm, "bad", 3),
    )
    result = run_gather(peers, (crm,), policy=best_effort(min_peers=2))
    assert result.status == "ok_partial"
    assert sorted(result.successes) == ["ok1", "ok2"]
    assert crm.state == {"a": 1, "b": 2}

    crm2 = SimExternalStore("crm")
    crm2.inject_failure("bad", times=1)
    crm2.inject_failure("bad2", times=1)
    peers2 = (
        write_peer("ok1", crm2, "a", 1),
        write_peer("boom", crm2, "bad", 2),
        write_peer("boom2", crm2, "bad2", 3),
    )
    low = run_gather(peers2, (crm2,), policy=best_effort(min_peers=2))
    assert low.status == "insufficient_peers"


def test_simultaneous_completion_is_tie_broken_by_index():
    crm = SimExternalStore("crm")
    peers = [write_peer("p0", crm, "a", 1), write_peer("p1", crm, "b", 2)]
    trace_store = TraceStore()
    scatter_gather(
        "req-1",
        "saga-1",
        peers,
        REQUIRE_ALL,
        [crm],
        clock=LogicalClock(),
        scheduler=SeededScheduler(seed=1, min_ms=30, max_ms=30),  # everyone lands on the same tick
        trace=trace_store,
        audit=AuditTrail(trace_store),
    )
    writes = [r for r in trace_store.rows() if r.kind == "peer_write"]
    assert [w.payload["peer"] for w in writes] == ["p0", "p1"]
    assert writes[0].payload["tie_broken_by_index"] is False
    assert all(w.payload["tie_broken_by_index"] is True for w in writes[1:])


def test_oversized_compensation_raises_alarm():
    crm = SimExternalStore("crm")
    peer = PeerAction("p", lambda session: {}, action_steps=1, compensation_steps=3)
    trace_store = TraceStore()
    run_gather((peer,), (crm,), trace=trace_store)
    alarms = [r for r in trace_store.rows() if r.kind == "compensation_alarm"]
    assert len(alarms) == 1


def test_failed_compensation_surfaces():
    crm = SimExternalStore("crm")
    crm.inject_failure("k2", times=1)
    crm.fail_compensation_keys.add("k1")

    def partial(session):
        session.write(crm, "k1", 1)
        session.write(crm, "k2", 2)
        return {}

    with pytest.raises(CompensationFailed):
        run_gather((PeerAction("p", partial),), (crm,))
