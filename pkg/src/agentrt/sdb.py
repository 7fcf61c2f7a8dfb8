"""The stochastic/deterministic boundary.

A proposer (here: a seeded simulation standing in for a language model) emits
Proposals. A deterministic verifier turns each into a Verdict. Only an
accepting verdict produces a CommitRecord; everything else produces a
RejectSignal that is fed back into the next attempt. The two status tags are
distinct string literals on distinct types, so a rejection can never be
mistaken for completion by a status check.

The simulated proposer is a pure function of (input, config, seed,
model_version). Variance and cross-version drift are modeled explicitly:

- ``sigma`` is the per-call variance amplitude: over random seeds, a fraction
  of roughly sigma of calls differ from the sigma=0 output for that input.
- ``divergence_rate_delta`` is the fraction of the input space whose output
  changes between adjacent model versions (see rng.interp_step).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

from agentrt import rng
from agentrt.clock import LogicalClock
from agentrt.trace import AuditTrail, TraceStore

COMMIT_STATUS = "completed"
REJECT_STATUS = "incomplete"

REASON_CODES = ("schema_violation", "policy_violation", "illegal_transition", "budget_exhausted")

PROPOSER_CALL_COST_MS = 120


@dataclass(frozen=True)
class Proposal:
    request_id: str
    content: dict[str, Any]
    proposer_meta: dict[str, Any]

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("proposal content must be non-empty")


@dataclass(frozen=True)
class RejectSignal:
    reason_code: str
    detail: str
    status: str = REJECT_STATUS

    def __post_init__(self) -> None:
        if self.reason_code not in REASON_CODES:
            raise ValueError(f"unknown reason_code: {self.reason_code!r}")
        if self.status != REJECT_STATUS:
            raise ValueError(f"reject status is always {REJECT_STATUS!r}")


@dataclass(frozen=True)
class Verdict:
    outcome: str  # "accept" | "reject"
    verifier_id: str
    checked_at: int
    reject: RejectSignal | None = None

    def __post_init__(self) -> None:
        if self.outcome not in ("accept", "reject"):
            raise ValueError(f"unknown verdict outcome: {self.outcome!r}")
        if (self.outcome == "reject") != (self.reject is not None):
            raise ValueError("reject verdicts carry a RejectSignal; accepts carry none")


@dataclass(frozen=True)
class CommitRecord:
    request_id: str
    commit_seq: int
    committed_value: dict[str, Any]
    audit_ref: str
    status: str = COMMIT_STATUS

    def __post_init__(self) -> None:
        if self.status != COMMIT_STATUS:
            raise ValueError(f"commit status is always {COMMIT_STATUS!r}")


@dataclass(frozen=True)
class ProposerConfig:
    sigma: float = 0.0
    divergence_rate_delta: float = 0.0
    bias_table: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.divergence_rate_delta <= 1.0:
            raise ValueError(f"divergence_rate_delta must be in [0,1], got {self.divergence_rate_delta}")


class SimulatedProposer:
    """Deterministic stand-in for a model call.

    ``call_count`` exists so purity checks elsewhere (the gate, the merge) can
    assert that no proposal happened on their watch.
    """

    def __init__(self, cfg: ProposerConfig) -> None:
        self.cfg = cfg
        self.call_count = 0

    def propose(self, input: dict[str, Any], seed: int, model_version: str, request_id: str = "") -> Proposal:
        self.call_count += 1
        input_key = rng.canonical(input)
        rank = rng.version_rank(model_version)
        interp = rng.interp_step(input_key, rank, self.cfg.divergence_rate_delta)

        # The noise gate depends on (input, seed) only, never on the version,
        # so cross-version divergence stays at delta even for noisy calls.
        noise_token = ""
        if self.cfg.sigma > 0 and rng.uniform("noise-gate", input_key, seed) < self.cfg.sigma:
            noise_token = rng.digest("noise", input_key, seed).hex()[:16]

        basis = rng.digest("content", input_key, interp, noise_token)
        input_class = str(input.get("class", "default")) if isinstance(input, dict) else "default"
        weights = self.cfg.bias_table.get(input_class, {"ok": 1.0})
        decision = rng.weighted_choice(weights, basis)
        content = {
            "input_class": input_class,
            "decision": decision,
            "score": round(int.from_bytes(basis[8:16], "big") / float(1 << 64), 6),
            "basis": basis.hex()[:12],
        }
        return Proposal(
            request_id=request_id or input_class,
            content=content,
            proposer_meta={
                "model_version": model_version,
                "seed": seed,
                "temperature_sigma": self.cfg.sigma,
            },
        )


def propose(input: dict[str, Any], cfg: ProposerConfig, seed: int, model_version: str) -> Proposal:
    """One-shot form of SimulatedProposer.propose."""
    return SimulatedProposer(cfg).propose(input, seed, model_version)


class Verifier:
    """Deterministic check over a proposal.

    ``fn`` returns None to accept or a RejectSignal to reject. It must be a
    pure function of the proposal and whatever policy snapshot it close over.
    """

    def __init__(self, verifier_id: str, fn: Callable[[Proposal], RejectSignal | None]) -> None:
        self.verifier_id = verifier_id
        self._fn = fn

    def check(self, proposal: Proposal, at: int) -> Verdict:
        signal = self._fn(proposal)
        if signal is None:
            return Verdict("accept", self.verifier_id, at)
        return Verdict("reject", self.verifier_id, at, reject=signal)


class CommitLedger:
    """Monotone commit sequencing for one request stream."""

    def __init__(self) -> None:
        self._seq = itertools.count(1)

    def next_seq(self) -> int:
        return next(self._seq)


def verify_and_commit(
    request_id: str,
    proposal_source: Callable[[int, RejectSignal | None], Proposal],
    verifier: Verifier,
    retry_budget: int,
    *,
    clock: LogicalClock | None = None,
    trace: TraceStore | None = None,
    audit: AuditTrail | None = None,
    ledger: CommitLedger | None = None,
    model_version: str | None = None,
) -> CommitRecord | RejectSignal:
    """Drive proposals through the verifier until commit or budget exhaustion.

    ``proposal_source`` is called with (attempt_index, feedback) where feedback
    is the previous attempt's RejectSignal, None on the first call. Total
    invocations never exceed retry_budget + 1. Returns the CommitRecord on
    accept, or the final RejectSignal (reason ``budget_exhausted``) otherwise.
    """
    if retry_budget < 0:
        raise ValueError(f"retry_budget must be >= 0, got {retry_budget}")
    clock = clock or LogicalClock()
    ledger = ledger or CommitLedger()
    feedback: RejectSignal | None = None
    last_signal: RejectSignal | None = None

    for attempt in range(retry_budget + 1):
        proposal = proposal_source(attempt, feedback)
        clock.advance(PROPOSER_CALL_COST_MS)
        verdict = verifier.check(proposal, clock.now)

        if verdict.outcome == "accept":
            seq = ledger.next_seq()
            ref = f"{request_id}#{attempt}"
            if trace is not None:
                trace.emit(
                    request_id,
                    "sdb",
                    "sdb_attempt",
                    {
                        "attempt": attempt,
                        "verdict": "accept",
                        "status": COMMIT_STATUS,
                        "commit_seq": seq,
                        "latency_ms": PROPOSER_CALL_COST_MS,
                    },
                    clock.now,
                    model_version=model_version,
                )
            return CommitRecord(request_id, seq, dict(proposal.content), ref)

        assert verdict.reject is not None
        last_signal = verdict.reject
        if trace is not None:
            trace.emit(
                request_id,
                "sdb",
                "sdb_attempt",
                {
                    "attempt": attempt,
                    "verdict": "reject",
                    "status": REJECT_STATUS,
                    "reason_code": last_signal.reason_code,
                    "latency_ms": PROPOSER_CALL_COST_MS,
                },
                clock.now,
                model_version=model_version,
            )
        if audit is not None:
            audit.record(
                request_id,
                "reject",
                last_signal.reason_code,
                clock.now,
                module="sdb",
                model_version=model_version,
            )
        feedback = last_signal

    detail = last_signal.detail if last_signal else ""
    return RejectSignal("budget_exhausted", f"retry budget {retry_budget} exhausted; last: {detail}")
