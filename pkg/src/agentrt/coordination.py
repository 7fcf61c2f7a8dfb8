"""Fan-out coordination: delegation with deterministic merge, and
scatter-gather over side-effecting peers with compensation.

Two rules hold everywhere here. First, merges are decided by ordered
deterministic rules, never by another model call; an overlap no rule covers is
an error, not a judgment call. Second, the retry budget belongs to the parent:
sub-agents carry a hard-wired internal budget of zero and the orchestrator
owns every retry, so total attempts are bounded and visible in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from agentrt import rng
from agentrt.clock import LogicalClock
from agentrt.trace import AuditTrail, TraceStore


class MergeConflict(Exception):
    def __init__(self, field_name: str, contenders: dict[str, Any]) -> None:
        self.field = field_name
        self.contenders = dict(contenders)
        super().__init__(f"no rule resolves field {field_name!r} between {sorted(contenders)}")


class PeerFailure(Exception):
    pass


class CompensationFailed(Exception):
    pass


class DelegationIncomplete(Exception):
    def __init__(self, successes: dict[str, Any], failures: dict[str, str]) -> None:
        self.successes = successes
        self.failures = failures
        super().__init__(f"delegation incomplete: failed={sorted(failures)}")


@dataclass(frozen=True)
class PartialResultPolicy:
    mode: str  # "require_all" | "best_effort"
    min_peers: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("require_all", "best_effort"):
            raise ValueError(f"unknown partial-result mode: {self.mode!r}")
        if self.mode == "best_effort" and self.min_peers < 1:
            raise ValueError("best_effort requires min_peers >= 1")


REQUIRE_ALL = PartialResultPolicy("require_all")


def best_effort(min_peers: int) -> PartialResultPolicy:
    return PartialResultPolicy("best_effort", min_peers)


@dataclass(frozen=True)
class SubTaskContract:
    """The typed contract a sub-task is discovered against."""

    input_type: str
    output_type: str
    deadline_ms: int
    retry_budget: int
    partial_result_policy: PartialResultPolicy = REQUIRE_ALL

    def __post_init__(self) -> None:
        if self.deadline_ms < 0 or self.retry_budget < 0:
            raise ValueError("deadline_ms and retry_budget must be >= 0")


@dataclass(frozen=True)
class SubAgent:
    """A peer the orchestrator fans out to.

    internal_retry_budget is not configurable: retries belong to the parent.
    """

    name: str
    run: Callable[[dict[str, Any], int], dict[str, Any]]
    internal_retry_budget: int = field(default=0, init=False)


@dataclass(frozen=True)
class MergeRule:
    """Ordered deterministic resolver: returns the winning agent or None."""

    name: str
    resolver: Callable[[str, dict[str, Any], dict[str, float]], str | None]


def rule_highest_weight(name: str = "highest_weight") -> MergeRule:
    def resolve(field_name: str, contenders: dict[str, Any], weights: dict[str, float]) -> str | None:
        ranked = sorted(contenders, key=lambda a: (-weights.get(a, 0.0), a))
        return ranked[0] if ranked else None

    return MergeRule(name, resolve)


def rule_prefer(agent: str, fields: frozenset[str] | None = None, name: str = "") -> MergeRule:
    def resolve(field_name: str, contenders: dict[str, Any], weights: dict[str, float]) -> str | None:
        if fields is not None and field_name not in fields:
            return None
        return agent if agent in contenders else None

    return MergeRule(name or f"prefer_{agent}", resolve)


@dataclass
class MergeResult:
    merged: dict[str, Any]
    contributions: dict[str, str]
    conflicts: list[dict[str, Any]]


def merge(
    outputs: dict[str, dict[str, Any]],
    weights: dict[str, float],
    rules: list[MergeRule],
) -> MergeResult:
    """Combine per-agent outputs field by field.

    Identical values merge silently (credited to the highest-weight supplier);
    differing values go through the rule list in order, first match wins. A
    differing overlap no rule covers raises MergeConflict. Output is invariant
    to input dict ordering.
    """
    merged: dict[str, Any] = {}
    contributions: dict[str, str] = {}
    conflicts: list[dict[str, Any]] = []
    fields = sorted({f for out in outputs.values() for f in out})
    for field_name in fields:
        contenders = {agent: outputs[agent][field_name] for agent in sorted(outputs) if field_name in outputs[agent]}
        distinct = {rng.canonical(v) for v in contenders.values()}
        if len(distinct) == 1:
            winner = sorted(contenders, key=lambda a: (-weights.get(a, 0.0), a))[0]
        else:
            winner = None
            for rule in rules:
                choice = rule.resolver(field_name, contenders, weights)
                if choice is not None:
                    if choice not in contenders:
                        raise MergeConflict(field_name, contenders)
                    winner = choice
                    conflicts.append({"field": field_name, "winner": choice, "rule": rule.name})
                    break
            if winner is None:
                raise MergeConflict(field_name, contenders)
        merged[field_name] = contenders[winner]
        contributions[field_name] = winner
    return MergeResult(merged, contributions, conflicts)


class SeededScheduler:
    """Deterministic latency source for fan-out peers."""

    def __init__(self, seed: int, min_ms: int = 20, max_ms: int = 400) -> None:
        if min_ms < 0 or max_ms < min_ms:
            raise ValueError("bad latency range")
        self.seed = seed
        self.min_ms = min_ms
        self.max_ms = max_ms

    def duration(self, scope: str, peer: str, attempt: int) -> int:
        span = self.max_ms - self.min_ms + 1
        return self.min_ms + rng.u64("sched", self.seed, scope, peer, attempt) % span


def delegate(
    request_id: str,
    task: dict[str, Any],
    sub_agents: list[SubAgent],
    contracts: dict[str, SubTaskContract],
    weights: dict[str, float],
    rules: list[MergeRule],
    *,
    clock: LogicalClock,
    scheduler: SeededScheduler,
    trace: TraceStore | None = None,
) -> MergeResult:
    """Fan a task out, retry per contract, merge deterministically.

    All peers start at the same logical instant; each attempt consumes its
    scheduled duration on the peer's own timeline. A retry whose start lands
    past the contract deadline is flagged in the trace (that pattern is a
    known failure signature, not an error here). Raises DelegationIncomplete
    when the partial-result policy is not met.
    """
    t0 = clock.now
    successes: dict[str, dict[str, Any]] = {}
    failures: dict[str, str] = {}
    peer_end: dict[str, int] = {}

    for agent in sub_agents:
        contract = contracts[agent.name]
        agent_now = t0
        for attempt in range(contract.retry_budget + 1):
            start = agent_now
            duration = scheduler.duration(request_id, agent.name, attempt)
            late_retry = attempt > 0 and start > t0 + contract.deadline_ms
            if trace is not None:
                trace.emit(
                    request_id,
                    "coordination",
                    "dispatch",
                    {"agent": agent.name, "attempt": attempt, "start": start},
                    start,
                )
                if late_retry:
                    trace.emit(
                        request_id,
                        "coordination",
                        "retry_after_deadline",
                        {"agent": agent.name, "attempt": attempt, "deadline": t0 + contract.deadline_ms, "start": start},
                        start,
                    )
            agent_now += duration
            try:
                result = agent.run(task, attempt)
            except Exception as exc:  # noqa: BLE001 - peer failures become data
                if trace is not None:
                    trace.emit(
                        request_id,
                        "coordination",
                        "sub_result",
                        {"agent": agent.name, "attempt": attempt, "ok": False, "reason": str(exc), "latency_ms": duration},
                        agent_now,
                    )
                failures[agent.name] = str(exc)
                continue
            if trace is not None:
                trace.emit(
                    request_id,
                    "coordination",
                    "sub_result",
                    {"agent": agent.name, "attempt": attempt, "ok": True, "latency_ms": duration},
                    agent_now,
                )
            successes[agent.name] = result
            failures.pop(agent.name, None)
            break
        peer_end[agent.name] = agent_now

    if peer_end:
        clock.advance_to(max(peer_end.values()))

    policy = _delegation_policy(contracts)
    if policy.mode == "require_all" and failures:
        raise DelegationIncomplete(successes, failures)
    if policy.mode == "best_effort" and len(successes) < policy.min_peers:
        raise DelegationIncomplete(successes, failures)

    result = merge(successes, weights, rules)
    if trace is not None:
        trace.emit(
            request_id,
            "coordination",
            "merge",
            {
                "contributions": result.contributions,
                "weights": {k: weights.get(k, 0.0) for k in sorted(successes)},
                "conflicts": result.conflicts,
            },
            clock.now,
        )
    return result


def _delegation_policy(contracts: dict[str, SubTaskContract]) -> PartialResultPolicy:
    # One gather policy per fan-out: the strictest contract wins.
    for contract in contracts.values():
        if contract.partial_result_policy.mode == "require_all":
            return REQUIRE_ALL
    policies = [c.partial_result_policy for c in contracts.values()]
    return max(policies, key=lambda p: p.min_peers) if policies else REQUIRE_ALL


class SimExternalStore:
    """Simulated external system (billing, provisioning, ...).

    Writes can be injected to fail before mutating. Compensations are
    deduplicated on (saga_id, step_index, sub_index): redelivery is a no-op.
    ``lossy_compensation`` exists for failure-signature injection in tests: it
    makes compensations silently skip the restore.
    """

    def __init__(self, name: str) -> None:
        self.name = name
        self.state: dict[str, Any] = {}
        self.write_log: list[dict[str, Any]] = []
        self.applied_compensations: set[tuple[str, int, int]] = set()
        self._fail_keys: dict[str, int] = {}
        self.lossy_compensation = False
        self.fail_compensation_keys: set[str] = set()

    def inject_failure(self, key: str, times: int = 1) -> None:
        self._fail_keys[key] = self._fail_keys.get(key, 0) + times

    def write(self, key: str, value: Any, saga_id: str = "", step_index: int = -1) -> None:
        remaining = self._fail_keys.get(key, 0)
        if remaining > 0:
            self._fail_keys[key] = remaining - 1
            raise PeerFailure(f"{self.name}: injected write failure on {key!r}")
        self.state[key] = value
        self.write_log.append({"op": "write", "key": key, "value": value, "saga_id": saga_id, "step_index": step_index})

    def compensate(
        self, saga_id: str, step_index: int, sub_index: int, key: str, had_key: bool, prior_value: Any
    ) -> str:
        """Restore a key to its pre-write value; idempotent per dedup key."""
        dedup = (saga_id, step_index, sub_index)
        if dedup in self.applied_compensations:
            return "duplicate"
        if key in self.fail_compensation_keys:
            raise CompensationFailed(f"{self.name}: injected compensation failure on {key!r}")
        self.applied_compensations.add(dedup)
        if not self.lossy_compensation:
            if had_key:
                self.state[key] = prior_value
            else:
                self.state.pop(key, None)
        self.write_log.append({"op": "compensate", "key": key, "saga_id": saga_id, "step_index": step_index})
        return "applied"

    def snapshot(self) -> dict[str, Any]:
        return dict(self.state)


@dataclass
class SagaLogEntry:
    step_index: int
    action_id: str
    status: str  # "pending" | "done" | "failed" | "compensated"
    undo: list[dict[str, Any]] = field(default_factory=list)
    completion_tick: int | None = None


class SagaSession:
    """Write scope handed to one peer action; registers undo before writing."""

    def __init__(self, saga_id: str, entry: SagaLogEntry) -> None:
        self.saga_id = saga_id
        self._entry = entry

    def write(self, store: SimExternalStore, key: str, value: Any) -> None:
        undo = {
            "store": store,
            "key": key,
            "had_key": key in store.state,
            "prior_value": store.state.get(key),
            "sub_index": len(self._entry.undo),
        }
        # Registration precedes the write: a failure mid-write still has its
        # undo on record.
        self._entry.undo.append(undo)
        store.write(key, value, self.saga_id, self._entry.step_index)


@dataclass(frozen=True)
class PeerAction:
    name: str
    act: Callable[[SagaSession], dict[str, Any]]
    action_steps: int = 1
    compensation_steps: int = 1


@dataclass
class GatherResult:
    saga_id: str
    status: str  # "ok" | "ok_partial" | "compensated" | "insufficient_peers"
    successes: dict[str, dict[str, Any]]
    failures: dict[str, str]
    compensated_steps: list[int]
    saga_log: list[SagaLogEntry]
    stores_clean: bool | None = None


def scatter_gather(
    request_id: str,
    saga_id: str,
    peers: list[PeerAction],
    policy: PartialResultPolicy,
    stores: list[SimExternalStore],
    *,
    clock: LogicalClock,
    scheduler: SeededScheduler,
    trace: TraceStore | None = None,
    audit: AuditTrail | None = None,
) -> GatherResult:
    """Run side-effecting peers; on require_all failure, compensate.

    Completion order is fixed by the seeded scheduler; same-tick ties resolve
    by peer index and are flagged. Compensations for completed steps run in
    strict reverse completion order, are at-least-once, and stay idempotent
    through store-level dedup. best_effort gathers never compensate.
    """
    t0 = clock.now
    pre = {s.name: s.snapshot() for s in stores}
    entries = [SagaLogEntry(i, p.name, "pending") for i, p in enumerate(peers)]

    schedule = []
    for index, peer in enumerate(peers):
        tick = t0 + scheduler.duration(saga_id, peer.name, 0)
        schedule.append((tick, index))
    ordered = sorted(schedule, key=lambda pair: pair)
    seen_ticks: set[int] = set()

    if trace is not None:
        trace.emit(
            request_id,
            "coordination",
            "scatter",
            {"saga_id": saga_id, "peers": [p.name for p in peers], "policy": policy.mode},
            t0,
        )

    successes: dict[str, dict[str, Any]] = {}
    failures: dict[str, str] = {}
    completed: list[int] = []

    for tick, index in ordered:
        peer = peers[index]
        entry = entries[index]
        tie = tick in seen_ticks
        seen_ticks.add(tick)
        if peer.compensation_steps > peer.action_steps and trace is not None:
            trace.emit(
                request_id,
                "coordination",
                "compensation_alarm",
                {
                    "saga_id": saga_id,
                    "peer": peer.name,
                    "action_steps": peer.action_steps,
                    "compensation_steps": peer.compensation_steps,
                },
                tick,
            )
        session = SagaSession(saga_id, entry)
        try:
            result = peer.act(session)
        except PeerFailure as exc:
            entry.status = "failed"
            failures[peer.name] = str(exc)
            if trace is not None:
                trace.emit(
                    request_id,
                    "coordination",
                    "peer_failure",
                    {"saga_id": saga_id, "peer": peer.name, "reason": str(exc), "tie_broken_by_index": tie},
                    tick,
                )
            continue
        entry.status = "done"
        entry.completion_tick = tick
        completed.append(index)
        successes[peer.name] = result
        if trace is not None:
            trace.emit(
                request_id,
                "coordination",
                "peer_write",
                {
                    "saga_id": saga_id,
                    "peer": peer.name,
                    "writes": len(entry.undo),
                    "tie_broken_by_index": tie,
                    "latency_ms": tick - t0,
                },
                tick,
            )

    if ordered:
        clock.advance_to(max(tick for tick, _ in ordered))

    compensated: list[int] = []
    status = "ok"
    if failures and policy.mode == "require_all":
        # Reverse completion order, most recent first. Failed steps have
        # their (possibly partial) undo list covered too, after the completed
        # ones that finished later than nothing -- a failed peer never
        # completed, so only its own partial writes are at stake.
        to_undo = sorted(completed, key=lambda i: (entries[i].completion_tick, i), reverse=True)
        partial_failed = [i for i in range(len(peers)) if entries[i].status == "failed" and entries[i].undo]
        for index in partial_failed + to_undo:
            entry = entries[index]
            _compensate_entry(saga_id, entry, request_id, clock, trace)
            if entry.status == "done":
                compensated.append(index)
            entry.status = "compensated"
        status = "compensated"
    elif failures and policy.mode == "best_effort":
        status = "ok_partial" if len(successes) >= policy.min_peers else "insufficient_peers"
    elif policy.mode == "best_effort" and len(successes) < policy.min_peers:
        status = "insufficient_peers"

    post = {s.name: s.snapshot() for s in stores}
    stores_clean = None
    if status == "compensated":
        stores_clean = post == pre
        if audit is not None and not stores_clean:
            audit.record(request_id, "escalation", "unclean_after_compensation", clock.now, module="coordination")

    if trace is not None:
        trace.emit(
            request_id,
            "coordination",
            "gather",
            {
                "saga_id": saga_id,
                "status": status,
                "successes": sorted(successes),
                "failures": sorted(failures),
                "compensated_steps": compensated,
                "stores_clean": stores_clean,
            },
            clock.now,
        )
    return GatherResult(saga_id, status, successes, failures, compensated, entries, stores_clean)


def _compensate_entry(
    saga_id: str,
    entry: SagaLogEntry,
    request_id: str,
    clock: LogicalClock,
    trace: TraceStore | None,
) -> None:
    for undo in reversed(entry.undo):
        outcome = undo["store"].compensate(
            saga_id, entry.step_index, undo["sub_index"], undo["key"], undo["had_key"], undo["prior_value"]
        )
        if trace is not None:
            trace.emit(
                request_id,
                "coordination",
                "compensation",
                {
                    "saga_id": saga_id,
                    "step_index": entry.step_index,
                    "sub_index": undo["sub_index"],
                    "key": undo["key"],
                    "outcome": outcome,
                },
                clock.now,
            )


def redeliver_compensation(
    saga_id: str,
    entry: SagaLogEntry,
    request_id: str,
    clock: LogicalClock,
    trace: TraceStore | None = None,
) -> None:
    """At-least-once delivery: invoking a compensation again must be a no-op."""
    _compensate_entry(saga_id, entry, request_id, clock, trace)
