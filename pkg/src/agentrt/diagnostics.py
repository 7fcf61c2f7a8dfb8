"""Failure signatures, replay-based triage, and reliability-drift estimation.

Twelve signatures, two per pattern, each a deterministic matcher over trace
rows: no judgment calls, a signature either matches a window of evidence or it
does not. Triage separates three failure families by replaying the failing
batch under the pinned and the prior model version: functional bugs persist
everywhere, version drift resolves on the prior version, and variance
reproduces on neither. The estimator fits observed reliability against time
to split steady architectural drift from per-call noise.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Callable

from agentrt import rng
from agentrt.trace import TraceRow

MIGRATION_ADVICE = "Consider migrating from P3 to P5: persist decided state instead of re-deriving it."


# ---------------------------------------------------------------------------
# Signature catalog


@dataclass(frozen=True)
class SignatureMatch:
    signature_id: str
    pattern: str
    evidence: dict[str, Any]


@dataclass(frozen=True)
class FailureSignature:
    signature_id: str
    pattern: str
    symptom: str
    cause: str
    correction: str
    matcher: Callable[[list[TraceRow]], dict[str, Any] | None]

    def match(self, rows: list[TraceRow]) -> SignatureMatch | None:
        evidence = self.matcher(rows)
        if evidence is None:
            return None
        return SignatureMatch(self.signature_id, self.pattern, evidence)


def _match_merge_dominance(rows: list[TraceRow], window: int = 100, factor: float = 2.0) -> dict[str, Any] | None:
    merges = [r for r in rows if r.kind == "merge"][-window:]
    if not merges:
        return None
    contributed: dict[str, int] = {}
    weight_sum: dict[str, float] = {}
    total_fields = 0
    for row in merges:
        weights = row.payload.get("weights", {})
        for agent, value in weights.items():
            weight_sum[agent] = weight_sum.get(agent, 0.0) + value
        for agent in row.payload.get("contributions", {}).values():
            contributed[agent] = contributed.get(agent, 0) + 1
            total_fields += 1
    if total_fields == 0:
        return None
    total_weight = sum(weight_sum.values())
    for agent in sorted(contributed):
        share = contributed[agent] / total_fields
        declared = (weight_sum.get(agent, 0.0) / total_weight) if total_weight > 0 else 0.0
        if share > factor * declared:
            return {
                "agent": agent,
                "contribution_share": round(share, 6),
                "declared_weight_share": round(declared, 6),
                "merges_in_window": len(merges),
            }
    return None


def _match_kind(kind: str, predicate: Callable[[TraceRow], bool] | None = None) -> Callable:
    def matcher(rows: list[TraceRow]) -> dict[str, Any] | None:
        hits = [r for r in rows if r.kind == kind and (predicate is None or predicate(r))]
        if not hits:
            return None
        first = hits[0]
        return {"count": len(hits), "first_at": first.logical_time, "request_id": first.request_id}

    return matcher


def _match_restart_same_crash(rows: list[TraceRow], threshold: int = 3) -> dict[str, Any] | None:
    by_request: dict[str, dict[str, int]] = {}
    for row in rows:
        if row.kind != "restart":
            continue
        reason = str(row.payload.get("crash_reason", ""))
        counts = by_request.setdefault(row.request_id, {})
        counts[reason] = counts.get(reason, 0) + 1
    for request_id in sorted(by_request):
        for reason, count in sorted(by_request[request_id].items()):
            if count >= threshold:
                return {"request_id": request_id, "crash_reason": reason, "identical_restarts": count}
    return None


def _match_gate_slower_than_action(rows: list[TraceRow]) -> dict[str, Any] | None:
    # The gated action is the next latency-bearing non-gate row on the same
    # request after the gate decision.
    by_request: dict[str, list[TraceRow]] = {}
    for row in rows:
        by_request.setdefault(row.request_id, []).append(row)
    for request_id in sorted(by_request):
        sequence = by_request[request_id]
        for i, row in enumerate(sequence):
            if row.kind != "gate":
                continue
            gate_latency = row.payload.get("latency_ms", 0)
            for later in sequence[i + 1 :]:
                if later.kind == "gate" or "latency_ms" not in later.payload:
                    continue
                if gate_latency > later.payload["latency_ms"]:
                    return {
                        "request_id": request_id,
                        "gate_latency_ms": gate_latency,
                        "action_latency_ms": later.payload["latency_ms"],
                        "action_kind": later.kind,
                    }
                break
    return None


def _match_cas_retry_p99(rows: list[TraceRow], limit: int = 3) -> dict[str, Any] | None:
    retries: dict[tuple[str, str], int] = {}
    saw_cas = False
    for row in rows:
        if row.kind != "cas":
            continue
        saw_cas = True
        key = (row.request_id, str(row.payload.get("actor", "")))
        retries.setdefault(key, 0)
        if row.payload.get("outcome") == "stale":
            retries[key] += 1
    if not saw_cas:
        return None
    counts = sorted(retries.values())
    p99 = counts[max(0, math.ceil(0.99 * len(counts)) - 1)]
    if p99 > limit:
        return {"p99_retries": p99, "workers": len(counts), "limit": limit}
    return None


def _match_all_deny_batch(rows: list[TraceRow], batch_size: int = 5) -> dict[str, Any] | None:
    run = 0
    for row in rows:
        if row.kind == "approval" and row.payload.get("event") == "resolved":
            if row.payload.get("decision") in ("denied", "sla_expired_denied"):
                run += 1
                if run >= batch_size:
                    return {"consecutive_denies": run, "as_of": row.logical_time}
            else:
                run = 0
    return None


def _match_kill_switch_leak(rows: list[TraceRow], budget_ms: int = 1000) -> dict[str, Any] | None:
    revoked_at: int | None = None
    for row in rows:
        if row.kind == "audit" and row.payload.get("plane") == "kill" and row.payload.get("decision") == "revoked":
            revoked_at = row.logical_time
            break
    if revoked_at is None:
        return None
    for row in rows:
        if row.kind == "tool_call" and row.logical_time > revoked_at + budget_ms:
            return {
                "revoked_at": revoked_at,
                "tool_started_at": row.logical_time,
                "tool": row.payload.get("tool"),
                "request_id": row.request_id,
            }
    return None


CATALOG: tuple[FailureSignature, ...] = (
    FailureSignature(
        "p1_merge_dominance",
        "P1",
        "One peer's fields dominate merges well past its declared weight.",
        "Arbitration leaked out of the rule list; an undeclared preference is deciding.",
        "Decide merges with ordered deterministic rules keyed to declared weights; rebalance or demote the dominant peer.",
        _match_merge_dominance,
    ),
    FailureSignature(
        "p1_retry_after_deadline",
        "P1",
        "Sub-task retries keep landing after the orchestrator's deadline.",
        "Peers run their own retry loops instead of returning control to the parent.",
        "Set sub-agent retry budgets to zero; the parent owns every retry.",
        _match_kind("retry_after_deadline"),
    ),
    FailureSignature(
        "p2_compensation_unclean",
        "P2",
        "Compensations ran, yet the external stores differ from their pre-scatter snapshots.",
        "Undo steps are lossy, misordered, or not idempotent under redelivery.",
        "Compensations must be idempotent and run in strict reverse completion order of the actions.",
        _match_kind("gather", lambda r: r.payload.get("status") == "compensated" and r.payload.get("stores_clean") is False),
    ),
    FailureSignature(
        "p2_compensation_oversized",
        "P2",
        "A peer registers more compensation steps than its action has.",
        "The action grew and its undo grew faster; the undo now carries its own failure surface.",
        "Split the action into narrower steps, each with its own small compensation.",
        _match_kind("compensation_alarm"),
    ),
    FailureSignature(
        "p3_replay_divergence",
        "P3",
        "Replaying the same log under a newer model version folds to a different projection.",
        "Downstream state depends on proposer output, which moved across versions.",
        MIGRATION_ADVICE,
        _match_kind("divergence", lambda r: r.payload.get("diverged") is True),
    ),
    FailureSignature(
        "p3_late_event_applied",
        "P3",
        "Events below the watermark were applied instead of routed to audit.",
        "Consumption skipped the watermark check, so arrival order leaked into state.",
        "Route late events to audit, never into the fold; late events are not re-admitted.",
        _match_kind(
            "event_applied",
            lambda r: "low_water" in r.payload and r.payload.get("event_time", 0) < r.payload["low_water"],
        ),
    ),
    FailureSignature(
        "p4_restart_same_crash",
        "P4",
        "Restarts burn the whole budget on an identical crash every time.",
        "The failure is deterministic; backoff cannot fix a functional bug.",
        "Stop restarting: capture the crashing input, fix the child, escalate meanwhile.",
        _match_restart_same_crash,
    ),
    FailureSignature(
        "p4_gate_slower_than_action",
        "P4",
        "The policy check takes longer than the action it guards.",
        "A model call or remote lookup crept into the gate.",
        "Gates are ordered predicates over local state; latency stays bounded by rule count.",
        _match_gate_slower_than_action,
    ),
    FailureSignature(
        "p5_cas_retry_p99",
        "P5",
        "Workers exceed three CAS retries at the 99th percentile.",
        "Contended rows, or transitions planned against stale reads.",
        "Re-read before planning, shrink the critical section, or split the contended row.",
        _match_cas_retry_p99,
    ),
    FailureSignature(
        "p5_stale_timer_write",
        "P5",
        "A timer fired after a manual override and still wrote its transition.",
        "The timer applied its transition unconditionally at an old version.",
        "Every timer fire is a CAS at the scheduled version; stale timers skip and audit.",
        _match_kind("timer_fire", lambda r: r.payload.get("cas_checked") is False),
    ),
    FailureSignature(
        "p6_all_deny_batch",
        "P6",
        "Approval batches resolve as all denied or all expired.",
        "The queue outruns its SLA, or reviewers rubber-stamp; the plane has become theater.",
        "Resize the SLA or the approval threshold, and route persistent overflow to escalation.",
        _match_all_deny_batch,
    ),
    FailureSignature(
        "p6_kill_switch_leak",
        "P6",
        "Tool calls keep starting after the kill switch was thrown.",
        "A worker path bypasses the cancellation boundary.",
        "Every tool invocation passes the token check at its boundary; audit the leaking call site.",
        _match_kill_switch_leak,
    ),
)


def match_signatures(rows: list[TraceRow], catalog: tuple[FailureSignature, ...] = CATALOG) -> list[SignatureMatch]:
    """Run every matcher over the rows; matches come back in catalog order."""
    out = []
    for signature in catalog:
        hit = signature.match(rows)
        if hit is not None:
            out.append(hit)
    return out


def signature_by_id(signature_id: str) -> FailureSignature:
    for signature in CATALOG:
        if signature.signature_id == signature_id:
            return signature
    raise KeyError(signature_id)


# ---------------------------------------------------------------------------
# Replay-based triage


class ReplayUnavailable(RuntimeError):
    """Fewer than two model versions: replay comparison is impossible."""


@dataclass(frozen=True)
class DiagnosticConfig:
    model_versions: tuple[str, ...]  # oldest to newest
    k: int = 1  # pass^k: required consecutive seeded successes
    reproduce_threshold: float = 0.5
    persist_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class FailureBatch:
    model_version: str
    unit_ids: tuple[str, ...]
    rows: tuple[TraceRow, ...] = ()


@dataclass(frozen=True)
class Functional:
    signatures: tuple[SignatureMatch, ...]
    still_failing_current: float
    still_failing_prior: float


@dataclass(frozen=True)
class ReplayDivergence:
    advice: str
    still_failing_current: float
    still_failing_prior: float
    prior_version: str


@dataclass(frozen=True)
class Variance:
    new_k: int
    still_failing_current: float
    still_failing_prior: float


def diagnose(
    batch: FailureBatch,
    replay_fn: Callable[[str, str, int], bool],
    cfg: DiagnosticConfig,
) -> Functional | ReplayDivergence | Variance:
    """Five steps: pin the version, replay the batch on the prior version,
    then split by where the failures reproduce.

    ``replay_fn(unit_id, model_version, seed)`` re-executes one unit and
    returns True on success. A unit "still fails" under a version unless it
    passes k independent seeded re-executions unanimously. Failures that
    persist on both versions are functional (signatures attached); failures
    that reproduce on the pinned version but resolve on the prior one are
    replay divergence; failures that reproduce on neither are variance, and
    the verification exponent k is doubled for the next round.
    """
    if batch.model_version not in cfg.model_versions:
        raise ReplayUnavailable(f"pinned version {batch.model_version!r} is not in the version set")
    index = cfg.model_versions.index(batch.model_version)
    if len(cfg.model_versions) < 2 or index == 0:
        raise ReplayUnavailable("need the pinned version plus at least one prior version to replay against")
    prior = cfg.model_versions[index - 1]
    if not batch.unit_ids:
        raise ValueError("empty failure batch")

    def still_fails(unit_id: str, version: str) -> bool:
        for i in range(cfg.k):
            seed = rng.u64("diagnose-seed", unit_id, version, i) % (1 << 31)
            if not replay_fn(unit_id, version, seed):
                return True
        return False

    n = len(batch.unit_ids)
    r_current = sum(still_fails(u, batch.model_version) for u in batch.unit_ids) / n
    r_prior = sum(still_fails(u, prior) for u in batch.unit_ids) / n

    if r_current >= cfg.reproduce_threshold and r_prior >= cfg.persist_threshold:
        return Functional(tuple(match_signatures(list(batch.rows))), r_current, r_prior)
    if r_current >= cfg.reproduce_threshold:
        return ReplayDivergence(MIGRATION_ADVICE, r_current, r_prior, prior)
    return Variance(cfg.k * 2, r_current, r_prior)


# ---------------------------------------------------------------------------
# Injection harness: synthetic failure batches with known ground truth

INJECTION_MODES = ("functional", "divergence", "variance")


def injected_failure_batch(
    mode: str,
    run_seed: int,
    n_candidates: int = 60,
    variance_p: float = 0.2,
) -> tuple[FailureBatch, Callable[[str, str, int], bool], DiagnosticConfig]:
    """Build a failing batch whose true class is known.

    functional: a broken deterministic rule fails the same units on every
    version and seed. divergence: units whose interpretation moved between v1
    and v2 fail on v2 only, seed-independent. variance: each execution fails
    independently with probability ``variance_p``; the batch is whoever failed
    in the original run, and fresh seeds mostly pass.
    """
    if mode not in INJECTION_MODES:
        raise ValueError(f"unknown injection mode: {mode!r}")
    units = [f"unit-{i:03d}" for i in range(n_candidates)]
    cfg = DiagnosticConfig(model_versions=("v1", "v2"))

    if mode == "functional":
        broken = frozenset(u for u in units if rng.uniform("inj-func", run_seed, u) < 0.5)

        def replay_fn(unit_id: str, version: str, seed: int) -> bool:
            return unit_id not in broken

        failed = tuple(u for u in units if u in broken)

    elif mode == "divergence":
        moved = frozenset(u for u in units if rng.uniform("inj-div", run_seed, u) < 0.45)

        def replay_fn(unit_id: str, version: str, seed: int) -> bool:
            return not (version == "v2" and unit_id in moved)

        failed = tuple(u for u in units if u in moved)

    else:

        def replay_fn(unit_id: str, version: str, seed: int) -> bool:
            return rng.uniform("inj-var", run_seed, unit_id, version, seed) >= variance_p

        # The original run drew its own seeds; whoever failed enters the batch.
        failed = tuple(u for u in units if rng.uniform("inj-var-orig", run_seed, u) < variance_p)

    if not failed:  # pragma: no cover - seeds above keep batches non-empty
        failed = (units[0],)
    return FailureBatch("v2", failed), replay_fn, cfg


EXPECTED_DIAGNOSIS = {"functional": Functional, "divergence": ReplayDivergence, "variance": Variance}


# ---------------------------------------------------------------------------
# Reliability momentum


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ReliabilitySeries:
    """(t, y) samples. t is strictly increasing; y is nominally a success
    fraction in [0, 1] for real reliability folds, but raw drift series are
    accepted so the estimator stays usable on synthetic inputs."""

    samples: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        ts = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("t must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MomentumEstimate:
    mu: float  # reliability slope per unit t
    sigma_hat: float  # residual standard deviation: per-call variance amplitude
    ci_mu: tuple[float, float]
    intercept: float
    n: int

    def covers(self, true_mu: float) -> bool:
        return self.ci_mu[0] <= true_mu <= self.ci_mu[1]


MIN_SAMPLES = 10


def estimate_momentum(series: ReliabilitySeries, confidence: float = 0.95) -> MomentumEstimate:
    """Least-squares fit of y on t with an intercept.

    sigma_hat is the residual standard deviation (ddof 2); the CI for the
    slope uses the standard-error formula with a normal quantile (the
    large-sample form of the t interval; MIN_SAMPLES guards the small-n case).
    """
    n = len(series)
    if n < MIN_SAMPLES:
        raise InsufficientData(f"need at least {MIN_SAMPLES} samples, got {n}")
    ts = [t for t, _ in series.samples]
    ys = [y for _, y in series.samples]
    t_mean = sum(ts) / n
    y_mean = sum(ys) / n
    sxx = sum((t - t_mean) ** 2 for t in ts)
    if sxx == 0:
        raise ValueError("degenerate series: all t equal")
    sxy = sum((t - t_mean) * (y - y_mean) for t, y in zip(ts, ys))
    mu = sxy / sxx
    intercept = y_mean - mu * t_mean
    sse = sum((y - (intercept + mu * t)) ** 2 for t, y in zip(ts, ys))
    sigma_hat = math.sqrt(sse / (n - 2))
    se_mu = sigma_hat / math.sqrt(sxx)
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    return MomentumEstimate(mu, sigma_hat, (mu - z * se_mu, mu + z * se_mu), intercept, n)


def generate_drift_series(mu: float, sigma: float, n: int, seed: int, t_step: float = 1.0, y0: float = 0.0) -> ReliabilitySeries:
    """Synthetic y(t) = y0 + mu*t + sigma*noise with seeded Gaussian noise."""
    rnd = random.Random(seed)
    samples = tuple((i * t_step, y0 + mu * i * t_step + sigma * rnd.gauss(0.0, 1.0)) for i in range(1, n + 1))
    return ReliabilitySeries(samples)


def rolling_success_series(outcomes: list[bool], window: int = 50) -> ReliabilitySeries:
    """Observed reliability: success fraction over a trailing window, indexed
    by completion count."""
    samples = []
    for i in range(len(outcomes)):
        lo = max(0, i + 1 - window)
        chunk = outcomes[lo : i + 1]
        samples.append((float(i + 1), round(sum(chunk) / len(chunk), 6)))
    return ReliabilitySeries(tuple(samples))
