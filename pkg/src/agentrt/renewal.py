"""A 90-day contract-renewal book driven end to end through the runtime.

Every scenario opens on day 0 and ends its contract on day 90. Signals about
the account arrive through a watermarked event log; a mid-window product EOL
flips the discount policy; a fan-out of scorer, offer drafter, and contract
builder produces the strategy; offers pass the pricing gate, the approval
plane, and an external-write saga before outreach goes out under throttle.
A decision timer closes each renewal unless a human override, a customer
acceptance, or a merger notice got there first, in which case the timer fires
stale and skips.

The simulation refuses to run without a serving console: the surface that
lets an operator see and steer the book is part of the system, not an add-on.
All time is logical milliseconds; wall pacing (for demos) never touches the
clock, so two runs with the same config produce byte-identical traces.
"""

from __future__ import annotations

import hashlib
import json
import time as _wall
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from agentrt import rng
from agentrt.clock import DAY_MS, SECOND_MS, LogicalClock
from agentrt.control import (
    ApprovalLedger,
    ApprovalRequest,
    CancellationToken,
    Completed,
    EscalationLedger,
    GateDeny,
    GatePolicy,
    Halted,
    Refused,
    SupervisorSpec,
    Throttle,
    ThrottleCaps,
    gate_check,
    rule_max_discount,
    rule_require_field,
    supervise,
    tool_call,
)
from agentrt.coordination import (
    REQUIRE_ALL,
    PeerAction,
    SeededScheduler,
    SimExternalStore,
    SubAgent,
    SubTaskContract,
    delegate,
    rule_prefer,
    scatter_gather,
)
from agentrt.diagnostics import InsufficientData, estimate_momentum, rolling_success_series
from agentrt.eventlog import Consumer, ConsumerRuntime, EventLog, consume, save_seed_schedule
from agentrt.observability import ConsoleServer
from agentrt.profiles import CONTRACT_RENEWAL
from agentrt.sdb import (
    CommitLedger,
    CommitRecord,
    Proposal,
    ProposerConfig,
    RejectSignal,
    SimulatedProposer,
    Verifier,
    verify_and_commit,
)
from agentrt.selector import AdrRecord, emit_adr, select
from agentrt.statestore import HUMAN_REQUIRED, CasOk, SkippedStale, StateStore
from agentrt.telco import OMITTED_SIGNAL_KINDS, RenewalScenario, load_scenarios
from agentrt.trace import AuditTrail, TraceStore

# States of one renewal row. human_required is the always-legal escape hatch.
OPENED = "opened"
STRATEGY_GENERATED = "strategy_generated"
OUTREACH_SENT = "outreach_sent"
HALTED = "halted"
TERMINAL_STATES = frozenset({"renewed", "renewed_with_offer", "restructured", "churned", "escalated"})

RENEWAL_STATES = frozenset({OPENED, STRATEGY_GENERATED, OUTREACH_SENT, HUMAN_REQUIRED, HALTED}) | TERMINAL_STATES

_CLOSEABLE = frozenset({"churned", "renewed", "restructured", "escalated", HALTED})
RENEWAL_TRANSITIONS: dict[str, frozenset[str]] = {
    OPENED: frozenset({STRATEGY_GENERATED}) | _CLOSEABLE,
    STRATEGY_GENERATED: frozenset({OUTREACH_SENT}) | _CLOSEABLE,
    OUTREACH_SENT: frozenset({"renewed_with_offer"}) | _CLOSEABLE,
    HUMAN_REQUIRED: frozenset({"renewed_with_offer"}) | _CLOSEABLE,
    "renewed": frozenset(),
    "renewed_with_offer": frozenset(),
    "restructured": frozenset(),
    "churned": frozenset(),
    "escalated": frozenset(),
    HALTED: frozenset(),
}

# Day beats inside the 90-day window.
ELIGIBILITY_DAY = 10
STRATEGY_DAY = 45
PROVISION_DAY = 46
OUTREACH_DAY = 47
RESPONSE_DAY = 50
DECISION_TIMER_DAY = 80
CLOSE_DAY = 90

POLICY_V1 = "pricing-v1"
POLICY_V2 = "pricing-v2"

OFFER_TIERS = ("deep", "standard", "light")
TIER_DISCOUNT = {"deep": 0.28, "standard": 0.18, "light": 0.10}

# Deterministic per-customer fault schedule: residues of the customer hash.
SCORER_CRASH_MODULUS = 13
PROVISION_FAIL_MODULUS = 17
APPROVAL_SILENCE_MODULUS = 7

RISK_SEVERITY_THRESHOLD = 2

BIAS_TABLE = {
    "signal_impact": {"minor": 0.6, "major": 0.4},
    "churn_score": {"stable": 0.5, "elevated": 0.3, "critical": 0.2},
    "offer_draft": {"light": 0.3, "standard": 0.5, "deep": 0.2},
    "offer_response": {"accept": 0.5, "decline": 0.5},
    "contract_template": {"standard": 0.7, "custom": 0.3},
}

PROPOSER_LATENCY_MS = 120
OUTREACH_TOOL_MS = 250
OUTREACH_STAGGER_MS = 2 * SECOND_MS


class ConsoleRequired(RuntimeError):
    """Raised when the simulation is asked to run without a serving console."""


@dataclass
class SimulationConfig:
    scenario_count: int = 100
    seed: int = 7
    csv_path: str | None = None  # packaged fixture when None
    window_days: int = 90
    eol_event_day: int = -47  # offset from contract end, so day 43 of the window
    gate_cap_v1: float = 0.30
    gate_cap_v2: float = 0.20
    auto_approve_factor: float = 0.5  # headless resolver approves up to cap * factor
    approval_sla_days: int = 2
    outreach_per_minute: int = 25
    outreach_per_day: int = 2000
    offer_retry_budget: int = 2
    model_version: str = "m-1"
    sigma: float = 0.1
    divergence_rate_delta: float = 0.1
    scorer_supervision: SupervisorSpec = SupervisorSpec(max_restarts=2, backoff_base_ms=500, backoff_factor=2.0)
    snapshot_every: int = 100
    momentum_window: int = 50
    adr_model_tag: str = "Claude Sonnet 4.6"
    adr_date_tag: str = "2026 Q2"
    # Demo pacing. Wall-clock only; the logical clock never sees it.
    pace_ms: int = 0
    pause_days: tuple[int, ...] = ()
    pause_wall_seconds: float = 3.0


def impact_consumer(consumer_id: str = "account-impact") -> Consumer:
    """Severity fold over account signals. Proposer-backed: the impact of a
    signal is a model judgment, so replaying under a different model version
    is exactly the divergence surface the log makes detectable."""

    def init() -> dict[str, Any]:
        return {"severity": 0, "kinds": [], "impact_log": []}

    def apply(state: dict[str, Any], event, ctx) -> dict[str, Any]:
        kind = str(event.payload.get("kind", "unknown"))
        proposal = ctx.propose({"class": "signal_impact", "kind": kind, "subject": event.payload.get("subject", "")})
        impact = 2 if proposal.content["decision"] == "major" else 1
        return {
            "severity": state["severity"] + impact,
            "kinds": state["kinds"] + [kind],
            "impact_log": state["impact_log"] + [{"offset": event.offset, "kind": kind, "impact": impact}],
        }

    return Consumer(consumer_id, init, apply, watermark_lag=0)


@dataclass
class _ScenarioState:
    scenario: RenewalScenario
    log: EventLog = field(default_factory=EventLog)
    runtime: ConsumerRuntime | None = None
    seed_schedule: dict[int, int] = field(default_factory=dict)
    strategy: dict[str, Any] | None = None
    offer_discount: float | None = None
    offer_tier: str | None = None
    offer_committed: bool = False
    offer_provisioned: bool = False
    approval_id: str | None = None
    planned_terminal: str | None = None
    halted: bool = False

    @property
    def rid(self) -> str:
        return self.scenario.renewal_id


@dataclass
class SimulationReport:
    scenario_count: int
    seed: int
    model_version: str
    terminal_counts: dict[str, int]
    terminal_map: dict[str, str]
    dataset: dict[str, Any]
    omitted_signal_kinds: tuple[str, ...]
    policy_versions: tuple[str, str]
    counters: dict[str, int]
    momentum: dict[str, Any] | None
    trace_digest: str
    artifacts: dict[str, str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_count": self.scenario_count,
            "seed": self.seed,
            "model_version": self.model_version,
            "terminal_counts": self.terminal_counts,
            "terminal_map": self.terminal_map,
            "dataset": self.dataset,
            "omitted_signal_kinds": list(self.omitted_signal_kinds),
            "policy_versions": list(self.policy_versions),
            "counters": self.counters,
            "momentum": self.momentum,
            "trace_digest": self.trace_digest,
            "artifacts": self.artifacts,
        }

    def render_text(self) -> str:
        lines = [
            f"renewal book: {self.scenario_count} scenarios, seed {self.seed}, model {self.model_version}",
            "signal kinds not wired into this run: " + ", ".join(self.omitted_signal_kinds),
            "",
            "terminals:",
        ]
        for state in sorted(self.terminal_counts):
            lines.append(f"  {state:<20} {self.terminal_counts[state]}")
        lines.append("")
        lines.append("counters:")
        for name in sorted(self.counters):
            lines.append(f"  {name:<28} {self.counters[name]}")
        if self.momentum is not None:
            mu = self.momentum["mu"]
            lo, hi = self.momentum["ci_mu"]
            lines.append("")
            lines.append(
                f"reliability momentum: mu={mu:+.6f}/completion sigma_hat={self.momentum['sigma_hat']:.4f} "
                f"ci95=[{lo:+.6f}, {hi:+.6f}] n={self.momentum['n']}"
            )
        lines.append("")
        lines.append(f"trace digest: {self.trace_digest}")
        return "\n".join(lines)


class RenewalSimulation:
    """Owns the runtime bundle for one book of renewals.

    Construction loads scenarios and wires every plane; run() needs a started
    ConsoleServer built over this same bundle (build_console() makes one).
    """

    def __init__(self, cfg: SimulationConfig, out_dir: str | Path | None = None) -> None:
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir else None
        scenarios, self.dataset_stats = load_scenarios(cfg.scenario_count, cfg.seed, cfg.csv_path)

        self.clock = LogicalClock()
        self.trace = TraceStore()
        self.audit = AuditTrail(self.trace)
        self.proposer = SimulatedProposer(
            ProposerConfig(sigma=cfg.sigma, divergence_rate_delta=cfg.divergence_rate_delta, bias_table=BIAS_TABLE)
        )
        self.commit_ledger = CommitLedger()
        self.store = StateStore(
            RENEWAL_STATES,
            transitions=RENEWAL_TRANSITIONS,
            snapshot_dir=(self.out_dir / "snapshots") if self.out_dir else None,
            snapshot_every=cfg.snapshot_every,
            trace=self.trace,
            audit=self.audit,
        )
        self.token = CancellationToken("renewal-book")
        self.throttle = Throttle(ThrottleCaps(cfg.outreach_per_minute, cfg.outreach_per_day), self.audit, self.trace)
        self.approvals = ApprovalLedger(self.audit, self.trace)
        self.escalations = EscalationLedger(self.store, self.audit, self.trace)
        self.scheduler = SeededScheduler(cfg.seed)
        self.billing_store = SimExternalStore("billing")
        self.provisioning_store = SimExternalStore("provisioning")

        self.gate_policy = GatePolicy(
            POLICY_V1,
            (rule_require_field("customer_ref", "require_customer_ref"), rule_max_discount(cfg.gate_cap_v1)),
        )
        self._eol_day = cfg.window_days + cfg.eol_event_day
        if not 0 < self._eol_day < cfg.window_days:
            raise ValueError(f"eol_event_day {cfg.eol_event_day} falls outside the renewal window")
        self._scenarios = [_ScenarioState(sc) for sc in scenarios]
        for st in self._scenarios:
            st.runtime = ConsumerRuntime(consumer=impact_consumer(), model_version=cfg.model_version)
        self._delivery: dict[int, list[tuple[_ScenarioState, Any]]] = {}
        for st in self._scenarios:
            for spec in st.scenario.signals:
                self._delivery.setdefault(cfg.window_days + spec.delivery_offset, []).append((st, spec))

        self._completions: list[tuple[int, str, str]] = []  # (at, rid, terminal)
        self._counters: dict[str, int] = {
            "late_events": 0,
            "stale_timers": 0,
            "compensated_sagas": 0,
            "throttle_refusals": 0,
            "supervisor_restarts": 0,
            "approvals_opened": 0,
            "approvals_approved": 0,
            "approvals_denied": 0,
            "approvals_expired": 0,
            "offers_committed": 0,
            "offers_live": 0,
            "proposer_calls": 0,
            "halted": 0,
        }
        self.report: SimulationReport | None = None
        self._adr: AdrRecord = emit_adr(select(CONTRACT_RENEWAL), cfg.adr_model_tag, cfg.adr_date_tag)

    # -- console wiring

    def build_console(self) -> ConsoleServer:
        return ConsoleServer(
            self.trace,
            self.clock,
            approvals=self.approvals,
            escalations=self.escalations,
            token=self.token,
            throttle=self.throttle,
            audit=self.audit,
            adr_provider=lambda: self._adr,
            terminal_states=TERMINAL_STATES | {HALTED},
            extra_health=lambda: {
                "day": self.clock.day,
                "scenarios": len(self._scenarios),
                "completed": len(self._completions),
                "proposer_calls": self.proposer.call_count,
            },
        )

    # -- the run loop

    def run(self, console: ConsoleServer) -> SimulationReport:
        if console is None or not console.running:
            raise ConsoleRequired("the observability surface must be serving before any renewal work starts")
        if console.trace is not self.trace:
            raise ConsoleRequired("console is not bound to this simulation's trace")

        for day in range(0, self.cfg.window_days + 1):
            self.clock.advance_to(self.clock.start_of_day(day))
            console.apply_commands(clock=self.clock)
            self.approvals.expire_due(clock=self.clock)
            if self.token.revoked:
                self._halt_open_scenarios()

            if day == 0:
                self._open_book()
            if day == ELIGIBILITY_DAY:
                self._eligibility_gates()
            if day == self._eol_day:
                self._policy_shift()
            self._deliver_signals(day)
            if day == STRATEGY_DAY:
                self._strategy_fanout()
            if day == PROVISION_DAY:
                # Staging precedes review: billing and provisioning writes are
                # pre-staged under saga cover, then the account team rules on
                # the discounts. A denied offer simply never goes out.
                self._provision_offers()
                self._resolve_approvals()
            if day == OUTREACH_DAY:
                self._outreach()
            if day == RESPONSE_DAY:
                self._offer_responses()
            self._merger_escalations(day)
            if day == DECISION_TIMER_DAY:
                self._fire_decision_timers()
            if day == CLOSE_DAY:
                console.apply_commands(clock=self.clock)
                self._close_book()

            self._pace(day, console)

        self._tally_audit_counters()
        self.report = self._build_report()
        return self.report

    def _pace(self, day: int, console: ConsoleServer) -> None:
        if self.cfg.pace_ms > 0:
            _wall.sleep(self.cfg.pace_ms / 1000.0)
        if day in self.cfg.pause_days:
            deadline = _wall.monotonic() + self.cfg.pause_wall_seconds
            while _wall.monotonic() < deadline:
                console.apply_commands(clock=self.clock)
                self.approvals.expire_due(clock=self.clock)
                if self.token.revoked:
                    self._halt_open_scenarios()
                _wall.sleep(0.05)

    # -- day beats

    def _open_book(self) -> None:
        for st in self._scenarios:
            sc = st.scenario
            self.store.create_row(
                st.rid,
                OPENED,
                {
                    "customer_ref": sc.customer_ref,
                    "contract_end_day": self.cfg.window_days,
                    "monthly_charges": sc.monthly_charges,
                },
                at=self.clock.now,
            )

    def _deliver_signals(self, day: int) -> None:
        beats = self._delivery.get(day, [])
        for i, (st, spec) in enumerate(beats):
            if st.halted:
                continue
            ingest = self.clock.now + i  # stable intra-day order
            st.log.append(
                {"kind": spec.kind, "subject": st.scenario.customer_ref, "event_day": self.cfg.window_days + spec.event_offset},
                event_time=self.clock.start_of_day(self.cfg.window_days + spec.event_offset),
                ingest_time=ingest,
                producer="signal-feed",
            )
            self.trace.emit(
                st.rid,
                "business",
                "signal",
                {"kind": spec.kind, "event_day": self.cfg.window_days + spec.event_offset, "delivery_day": day},
                ingest,
            )
        # EOL notices enter the same logs on the shift day; consumption below
        # picks up everything appended for this day in one pass.
        for st in self._scenarios:
            if st.halted or st.runtime is None or st.runtime.cursor >= len(st.log):
                continue
            for offset in range(st.runtime.cursor, len(st.log)):
                st.seed_schedule.setdefault(offset, offset)
            _, late = consume(
                st.log,
                st.runtime,
                st.seed_schedule,
                self.proposer,
                trace=self.trace,
                audit=self.audit,
                request_id_of=lambda e, rid=st.rid: rid,
            )
            self._counters["late_events"] += len(late)

    def _eligibility_gates(self, stage: str = "pre_window") -> None:
        for st in self._scenarios:
            if st.halted:
                continue
            gate_check(
                st.rid,
                {"kind": "renewal_eligibility", "customer_ref": st.scenario.customer_ref},
                {"stage": stage},
                self.gate_policy,
                clock=self.clock,
                trace=self.trace,
                audit=self.audit,
            )

    def _policy_shift(self) -> None:
        self.gate_policy = GatePolicy(
            POLICY_V2,
            (rule_require_field("customer_ref", "require_customer_ref"), rule_max_discount(self.cfg.gate_cap_v2)),
        )
        self.trace.emit(
            "policy-shift",
            "control",
            "policy_change",
            {
                "from": POLICY_V1,
                "to": POLICY_V2,
                "cap_from": self.cfg.gate_cap_v1,
                "cap_to": self.cfg.gate_cap_v2,
                "trigger": "product_eol",
            },
            self.clock.now,
            policy_version=POLICY_V2,
        )
        for st in self._scenarios:
            if st.halted or not st.scenario.eol_affected:
                continue
            st.log.append(
                {"kind": "product_eol", "subject": st.scenario.customer_ref, "event_day": self._eol_day},
                event_time=self.clock.now,
                ingest_time=self.clock.now,
                producer="product-feed",
            )
            self.trace.emit(
                st.rid,
                "business",
                "signal",
                {"kind": "product_eol", "event_day": self._eol_day, "delivery_day": self._eol_day},
                self.clock.now,
            )
        # Every in-flight renewal is re-vetted under the new policy, so its
        # compliance lineage carries both versions.
        self._eligibility_gates(stage="post_eol_regate")

    # -- strategy fan-out (day 45)

    def _severity(self, st: _ScenarioState) -> int:
        assert st.runtime is not None
        return int(st.runtime.state.get("severity", 0))

    def _risk_tier(self, st: _ScenarioState) -> str:
        month_to_month = st.scenario.features["contract"] == "Month-to-month"
        severity = self._severity(st)
        if month_to_month and severity >= RISK_SEVERITY_THRESHOLD:
            return "high"
        if severity >= RISK_SEVERITY_THRESHOLD:
            return "elevated"
        return "standard"

    def _scorer_agent(self, st: _ScenarioState) -> SubAgent:
        crash_once = {"armed": st.scenario.customer_hash % SCORER_CRASH_MODULUS == 0}

        def scorer_child(attempt: int) -> dict[str, Any]:
            if crash_once["armed"]:
                crash_once["armed"] = False
                raise RuntimeError("scorer_worker_oom")
            self.clock.advance(PROPOSER_LATENCY_MS)
            proposal = self.proposer.propose(
                {
                    "class": "churn_score",
                    "subject": st.scenario.customer_ref,
                    "severity": self._severity(st),
                    "features": st.scenario.features["tenure_bucket"],
                },
                rng.u64("seed", self.cfg.seed, st.rid, "churn_score") % (1 << 31),
                self.cfg.model_version,
                request_id=st.rid,
            )
            score = round(min(0.99, proposal.content["score"] * 0.6 + self._severity(st) * 0.1), 4)
            return {"churn_score": score, "risk_tier": self._risk_tier(st), "next_step": "outreach"}

        def run(task: dict[str, Any], attempt: int) -> dict[str, Any]:
            outcome = supervise(st.rid, scorer_child, self.cfg.scorer_supervision, clock=self.clock, trace=self.trace, audit=self.audit)
            self._counters["supervisor_restarts"] += outcome.restarts
            if isinstance(outcome, Completed):
                return outcome.value
            raise RuntimeError(outcome.reason)

        return SubAgent("churn_scorer", run)

    def _drafter_agent(self, st: _ScenarioState) -> SubAgent:
        def run(task: dict[str, Any], attempt: int) -> dict[str, Any]:
            if self._risk_tier(st) != "high":
                return {"offer_discount": None, "next_step": "outreach"}
            base = self.proposer.propose(
                {"class": "offer_draft", "subject": st.scenario.customer_ref, "severity": self._severity(st)},
                rng.u64("seed", self.cfg.seed, st.rid, "offer_draft") % (1 << 31),
                self.cfg.model_version,
                request_id=st.rid,
            )
            base_index = OFFER_TIERS.index(base.content["decision"])

            def source(attempt_index: int, feedback: RejectSignal | None) -> Proposal:
                tier = OFFER_TIERS[min(base_index + attempt_index, len(OFFER_TIERS) - 1)]
                return Proposal(
                    request_id=f"{st.rid}:offer",
                    content={
                        "discount_pct": TIER_DISCOUNT[tier],
                        "tier": tier,
                        "template": "retention_offer",
                        "customer_ref": st.scenario.customer_ref,
                    },
                    proposer_meta={"basis": base.content["basis"], "base_tier": base.content["decision"]},
                )

            def gate_verify(proposal: Proposal) -> RejectSignal | None:
                decision = gate_check(
                    st.rid,
                    dict(proposal.content),
                    {"stage": "offer_draft"},
                    self.gate_policy,
                    clock=self.clock,
                    trace=self.trace,
                    audit=self.audit,
                )
                if isinstance(decision, GateDeny):
                    return RejectSignal("policy_violation", f"{decision.rule_id}: {decision.reason}")
                return None

            outcome = verify_and_commit(
                f"{st.rid}:offer",
                source,
                Verifier("pricing-gate", gate_verify),
                self.cfg.offer_retry_budget,
                clock=self.clock,
                trace=self.trace,
                audit=self.audit,
                ledger=self.commit_ledger,
                model_version=self.cfg.model_version,
            )
            if isinstance(outcome, CommitRecord):
                return {
                    "offer_discount": outcome.committed_value["discount_pct"],
                    "offer_tier": outcome.committed_value["tier"],
                    "offer_commit_seq": outcome.commit_seq,
                    "next_step": "outreach_with_offer",
                }
            return {"offer_discount": None, "offer_fallback": "no_offer", "next_step": "outreach"}

        return SubAgent("offer_drafter", run)

    def _builder_agent(self, st: _ScenarioState) -> SubAgent:
        def run(task: dict[str, Any], attempt: int) -> dict[str, Any]:
            self.clock.advance(PROPOSER_LATENCY_MS)
            proposal = self.proposer.propose(
                {"class": "contract_template", "subject": st.scenario.customer_ref, "contract": st.scenario.features["contract"]},
                rng.u64("seed", self.cfg.seed, st.rid, "contract_template") % (1 << 31),
                self.cfg.model_version,
                request_id=st.rid,
            )
            return {"template": proposal.content["decision"], "next_step": "outreach"}

        return SubAgent("contract_builder", run)

    def _strategy_fanout(self) -> None:
        contracts = {
            "churn_scorer": SubTaskContract("account_state", "risk_assessment", deadline_ms=20_000, retry_budget=1),
            "offer_drafter": SubTaskContract("risk_assessment", "offer_draft", deadline_ms=20_000, retry_budget=1),
            "contract_builder": SubTaskContract("account_state", "contract_shell", deadline_ms=20_000, retry_budget=1),
        }
        weights = {"churn_scorer": 0.4, "offer_drafter": 0.35, "contract_builder": 0.25}
        rules = [rule_prefer("offer_drafter", frozenset({"next_step"}))]

        for st in self._scenarios:
            if st.halted:
                continue
            if self.token.revoked:
                self._halt_open_scenarios()
                return
            merged = delegate(
                st.rid,
                {"customer_ref": st.scenario.customer_ref, "severity": self._severity(st)},
                [self._scorer_agent(st), self._drafter_agent(st), self._builder_agent(st)],
                contracts,
                weights,
                rules,
                clock=self.clock,
                scheduler=self.scheduler,
                trace=self.trace,
            )
            st.strategy = dict(merged.merged)
            st.offer_discount = st.strategy.get("offer_discount")
            st.offer_tier = st.strategy.get("offer_tier")
            st.offer_committed = st.offer_discount is not None
            if st.offer_committed:
                self._counters["offers_committed"] += 1
            row = self.store.get(st.rid)
            self.store.cas_transition(
                st.rid,
                row.version,
                STRATEGY_GENERATED,
                {k: v for k, v in st.strategy.items() if k != "offer_commit_seq"},
                clock=self.clock,
                actor="strategy",
            )
            if st.offer_committed:
                # Every committed discount needs sign-off; the headless
                # resolver only waves through the bottom half of the cap.
                st.approval_id = f"apr-{st.rid}"
                self.approvals.open(
                    ApprovalRequest(
                        approval_id=st.approval_id,
                        request_id=st.rid,
                        action={
                            "kind": "retention_offer",
                            "discount_pct": st.offer_discount,
                            "tier": st.offer_tier,
                            "customer_ref": st.scenario.customer_ref,
                        },
                        opened_at=self.clock.now,
                        sla_deadline=self.clock.now + self.cfg.approval_sla_days * DAY_MS,
                    )
                )
                self._counters["approvals_opened"] += 1

    # -- approvals and provisioning (day 46)

    def _resolve_approvals(self) -> None:
        cap = self.cfg.gate_cap_v2 if self.gate_policy.policy_version == POLICY_V2 else self.cfg.gate_cap_v1
        for st in self._scenarios:
            if st.halted or st.approval_id is None:
                continue
            if self.approvals.resolution(st.approval_id) is not None:
                continue
            if st.scenario.customer_hash % APPROVAL_SILENCE_MODULUS == 0:
                continue  # nobody answers; the SLA clock decides
            decision = "approved" if st.offer_discount <= cap * self.cfg.auto_approve_factor else "denied"
            self.approvals.resolve(st.approval_id, decision, clock=self.clock, resolver="account-team")

    def _offer_live(self, st: _ScenarioState) -> bool:
        if not st.offer_committed:
            return False
        if st.approval_id is None:
            return True
        resolution = self.approvals.resolution(st.approval_id)
        return resolution is not None and resolution.decision == "approved"

    def _provision_offers(self) -> None:
        for st in self._scenarios:
            if st.halted or not st.offer_committed:
                continue
            if st.scenario.customer_hash % PROVISION_FAIL_MODULUS == 0:
                self.provisioning_store.inject_failure(f"{st.rid}:order")

            def bill(session, st=st) -> dict[str, Any]:
                session.write(self.billing_store, f"{st.rid}:discount", st.offer_discount)
                return {"posted": True}

            def provision(session, st=st) -> dict[str, Any]:
                session.write(self.provisioning_store, f"{st.rid}:order", {"tier": st.offer_tier})
                return {"ordered": True}

            result = scatter_gather(
                st.rid,
                f"saga-{st.rid}",
                [PeerAction("billing_adjust", bill), PeerAction("provision_order", provision)],
                REQUIRE_ALL,
                [self.billing_store, self.provisioning_store],
                clock=self.clock,
                scheduler=self.scheduler,
                trace=self.trace,
                audit=self.audit,
            )
            if result.status == "ok":
                st.offer_provisioned = True
            else:
                self._counters["compensated_sagas"] += 1
                st.offer_committed = False  # offer is dead; outreach falls back

    # -- outreach (day 47)

    def _planned_terminal(self, st: _ScenarioState) -> str:
        # The timer's default verdict; an acceptance, an escalation, or a
        # console action beats it to the row and the timer fires stale.
        tier = self._risk_tier(st)
        if tier == "high":
            return "churned"
        if st.scenario.features["contract"] == "Month-to-month":
            return "restructured"
        return "renewed"

    def _outreach(self) -> None:
        day_start = self.clock.start_of_day(OUTREACH_DAY)
        for i, st in enumerate(self._scenarios):
            if st.halted:
                continue
            self.clock.advance_to(max(self.clock.now, day_start + i * OUTREACH_STAGGER_MS))
            while True:
                admission = self.throttle.admit("outreach", clock=self.clock, request_id=st.rid)
                if isinstance(admission, Refused):
                    self._counters["throttle_refusals"] += 1
                    self.clock.advance_to(admission.retry_at)
                    continue
                break
            sent = tool_call(
                st.rid,
                self.token,
                "send_renewal_notice",
                OUTREACH_TOOL_MS,
                clock=self.clock,
                trace=self.trace,
                fn=lambda: {"sent": True},
            )
            if isinstance(sent, Halted):
                self._halt_scenario(st)
                continue
            row = self.store.get(st.rid)
            self.store.cas_transition(
                st.rid,
                row.version,
                OUTREACH_SENT,
                {"outreach_at": self.clock.now, "with_offer": self._offer_live(st) and st.offer_provisioned},
                clock=self.clock,
                actor="outreach",
            )
            st.planned_terminal = self._planned_terminal(st)
            self.store.schedule_timer(
                st.rid,
                fire_at=self.clock.start_of_day(DECISION_TIMER_DAY),
                next_state=st.planned_terminal,
                clock=self.clock,
            )

    # -- customer response (day 50)

    def _offer_responses(self) -> None:
        for st in self._scenarios:
            if st.halted or not (st.offer_provisioned and self._offer_live(st)):
                continue
            self.clock.advance(PROPOSER_LATENCY_MS)
            proposal = self.proposer.propose(
                {"class": "offer_response", "subject": st.scenario.customer_ref, "tier": st.offer_tier},
                rng.u64("seed", self.cfg.seed, st.rid, "offer_response") % (1 << 31),
                self.cfg.model_version,
                request_id=st.rid,
            )
            if proposal.content["decision"] != "accept":
                continue
            row = self.store.get(st.rid)
            result = self.store.cas_transition(
                st.rid,
                row.version,
                "renewed_with_offer",
                {"accepted_discount": st.offer_discount},
                clock=self.clock,
                actor="customer_response",
            )
            if isinstance(result, CasOk):
                self._record_completion(st, "renewed_with_offer")

    # -- merger escalations (day 60, driven by the signal schedule)

    def _merger_escalations(self, day: int) -> None:
        for st, spec in self._delivery.get(day, []):
            if st.halted or spec.kind != "merger_notice":
                continue
            # A renewal that already closed stays closed; the merger lands on
            # the account, not on a finished piece of work.
            if self.store.get(st.rid).state in TERMINAL_STATES:
                continue
            self.escalations.escalate(st.rid, "merger_notice", clock=self.clock)

    # -- decision timers (day 80)

    def _fire_decision_timers(self) -> None:
        for handle in self.store.due_timers(self.clock.now):
            result = self.store.fire_timer(handle, clock=self.clock)
            if isinstance(result, SkippedStale):
                self._counters["stale_timers"] += 1
                continue
            st = self._by_rid(handle.row_id)
            if st is not None:
                self._record_completion(st, handle.next_state)

    # -- close (day 90)

    def _close_book(self) -> None:
        for st in self._scenarios:
            if st.halted:
                continue
            row = self.store.get(st.rid)
            if row.state in TERMINAL_STATES:
                continue
            if row.state == HUMAN_REQUIRED:
                open_escalations = [r for r in self.escalations.pending() if r.row_id == st.rid]
                if open_escalations:
                    self.escalations.resolve(
                        open_escalations[0].escalation_id, "escalated", clock=self.clock, resolver="close_of_window"
                    )
                else:
                    self.store.cas_transition(st.rid, row.version, "escalated", clock=self.clock, actor="close")
                self._record_completion(st, "escalated")
                continue
            # Stragglers that never reached their timer land on the plan.
            terminal = st.planned_terminal or self._planned_terminal(st)
            self.store.cas_transition(st.rid, row.version, terminal, clock=self.clock, actor="close")
            self._record_completion(st, terminal)

    # -- kill handling

    def _halt_scenario(self, st: _ScenarioState) -> None:
        if st.halted:
            return
        st.halted = True
        self._counters["halted"] += 1
        row = self.store.get(st.rid)
        if row.state not in TERMINAL_STATES and row.state != HALTED:
            self.store.cas_transition(st.rid, row.version, HALTED, clock=self.clock, actor="kill")

    def _halt_open_scenarios(self) -> None:
        for st in self._scenarios:
            if st.halted:
                continue
            row = self.store.get(st.rid)
            if row.state in TERMINAL_STATES:
                continue
            self.trace.emit(
                st.rid,
                "control",
                "halt",
                {"at_boundary": "tick", "revoked_at": self.token.revoked_at},
                self.clock.now,
            )
            self._halt_scenario(st)

    # -- bookkeeping

    def _by_rid(self, rid: str) -> _ScenarioState | None:
        for st in self._scenarios:
            if st.rid == rid:
                return st
        return None

    def _record_completion(self, st: _ScenarioState, terminal: str) -> None:
        self._completions.append((self.clock.now, st.rid, terminal))

    def _tally_audit_counters(self) -> None:
        for record in self.audit.records(plane="approval"):
            if record.decision == "approved":
                self._counters["approvals_approved"] += 1
            elif record.decision == "denied":
                self._counters["approvals_denied"] += 1
            elif record.decision == "sla_expired_denied":
                self._counters["approvals_expired"] += 1
        self._counters["offers_live"] = sum(1 for st in self._scenarios if st.offer_provisioned and self._offer_live(st))
        self._counters["proposer_calls"] = self.proposer.call_count

    def _build_report(self) -> SimulationReport:
        terminal_map: dict[str, str] = {}
        terminal_counts: dict[str, int] = {}
        for st in self._scenarios:
            state = self.store.get(st.rid).state
            terminal_map[st.rid] = state
            terminal_counts[state] = terminal_counts.get(state, 0) + 1

        ordered = sorted(self._completions)
        outcomes = [terminal in ("renewed", "renewed_with_offer", "restructured") for _, _, terminal in ordered]
        momentum: dict[str, Any] | None = None
        if outcomes:
            try:
                estimate = estimate_momentum(rolling_success_series(outcomes, window=self.cfg.momentum_window))
                momentum = {
                    "mu": estimate.mu,
                    "sigma_hat": estimate.sigma_hat,
                    "ci_mu": list(estimate.ci_mu),
                    "n": estimate.n,
                }
            except InsufficientData:
                momentum = None

        lines = [row.to_line() for row in self.trace.rows()]
        digest = hashlib.sha256(("\n".join(lines) + "\n").encode("utf-8")).hexdigest()

        artifacts: dict[str, str] = {}
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            trace_path = self.trace.save(self.out_dir / "trace.jsonl")
            artifacts["trace"] = str(trace_path)
            events_dir = self.out_dir / "events"
            seeds_dir = self.out_dir / "seeds"
            events_dir.mkdir(exist_ok=True)
            seeds_dir.mkdir(exist_ok=True)
            for st in self._scenarios:
                st.log.save(events_dir / f"{st.rid}.jsonl")
                save_seed_schedule(st.seed_schedule, seeds_dir / f"{st.rid}.json")
            artifacts["events_dir"] = str(events_dir)
            artifacts["seeds_dir"] = str(seeds_dir)
            artifacts["report"] = str(self.out_dir / "report.json")
            artifacts["report_text"] = str(self.out_dir / "report.txt")

        report = SimulationReport(
            scenario_count=self.cfg.scenario_count,
            seed=self.cfg.seed,
            model_version=self.cfg.model_version,
            terminal_counts=dict(sorted(terminal_counts.items())),
            terminal_map=terminal_map,
            dataset={
                "rows": self.dataset_stats.rows,
                "churn_rows": self.dataset_stats.churn_rows,
                "churn_fraction": round(self.dataset_stats.churn_fraction, 6),
                "blank_total_charges": self.dataset_stats.blank_total_charges,
            },
            omitted_signal_kinds=OMITTED_SIGNAL_KINDS,
            policy_versions=(POLICY_V1, POLICY_V2),
            counters=dict(self._counters),
            momentum=momentum,
            trace_digest=digest,
            artifacts=artifacts,
        )
        if self.out_dir is not None:
            (self.out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
            (self.out_dir / "report.txt").write_text(report.render_text() + "\n", encoding="utf-8")
        return report


def run_book(cfg: SimulationConfig, out_dir: str | Path | None = None, port: int = 0) -> tuple[SimulationReport, int]:
    """Convenience wrapper: build the simulation, serve the console, run."""
    sim = RenewalSimulation(cfg, out_dir=out_dir)
    console = sim.build_console()
    console.start(port)
    try:
        report = sim.run(console)
    finally:
        console.stop()
    return report, sim.proposer.call_count
