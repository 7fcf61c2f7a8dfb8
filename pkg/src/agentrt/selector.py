"""Pattern selection: from a filled-in workload profile to a decision record.

Selection is a pure function of the profile: classify the runtime, then pick
the spine, the coordination shape, and the control planes from fixed
predicates. The output is a six-row decision record (runtime class, spine,
coordination, control, build sequence, date/model version) that serializes
losslessly and renders as a fixed-width table. Row five is always
console-first: observability precedes the agent.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

from agentrt.clock import HOUR_MS


class ProfileError(ValueError):
    pass


class RuntimeClass(enum.Enum):
    CONVERSATIONAL = "Conversational"
    AUTONOMOUS = "Autonomous"
    LONG_HORIZON = "Long-Horizon"


UNITS = ("session", "task", "process")
DURATIONS = ("seconds", "minutes", "hours_to_days")

_PROFILE_FIELDS = (
    "unit_of_work",
    "duration_class",
    "world_changes_midflight",
    "pauses_over_one_hour",
    "state_reconstructible_from_input",
    "external_side_effects",
    "single_outcome_owner",
    "subtasks_independent",
    "deterministic_merge_feasible",
    "peers_with_side_effects",
    "partial_failure_tolerated",
    "wrong_write_cost_exceeds_latency_cost",
    "legally_consequential",
    "cases_outside_policy_envelope",
    "auditors_ask_who_decided",
)


@dataclass(frozen=True)
class SelectorConfig:
    """Decision thresholds used when profiles are built from raw telemetry."""

    long_pause_threshold_ms: int = HOUR_MS


def pauses_over_threshold(max_pause_ms: int, cfg: SelectorConfig | None = None) -> bool:
    cfg = cfg or SelectorConfig()
    return max_pause_ms > cfg.long_pause_threshold_ms


@dataclass(frozen=True)
class WorkloadProfile:
    """Fifteen answered intake questions. Every field is required; a profile
    with unknowns is not ready for selection."""

    name: str
    unit_of_work: str
    duration_class: str
    world_changes_midflight: bool
    pauses_over_one_hour: bool
    state_reconstructible_from_input: bool
    external_side_effects: bool
    single_outcome_owner: bool
    subtasks_independent: bool
    deterministic_merge_feasible: bool
    peers_with_side_effects: bool
    partial_failure_tolerated: bool
    wrong_write_cost_exceeds_latency_cost: bool
    legally_consequential: bool
    cases_outside_policy_envelope: bool
    auditors_ask_who_decided: bool

    def __post_init__(self) -> None:
        if self.unit_of_work not in UNITS:
            raise ProfileError(f"unit_of_work must be one of {UNITS}, got {self.unit_of_work!r}")
        if self.duration_class not in DURATIONS:
            raise ProfileError(f"duration_class must be one of {DURATIONS}, got {self.duration_class!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **{f: getattr(self, f) for f in _PROFILE_FIELDS}}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "WorkloadProfile":
        missing = [f for f in ("name", *_PROFILE_FIELDS) if f not in raw]
        if missing:
            raise ProfileError(f"profile missing required fields: {', '.join(missing)}")
        unknown = sorted(set(raw) - {"name", *_PROFILE_FIELDS})
        if unknown:
            raise ProfileError(f"profile has unknown fields: {', '.join(unknown)}")
        return cls(**{k: raw[k] for k in ("name", *_PROFILE_FIELDS)})


# ---------------------------------------------------------------------------
# The four decisions


@dataclass(frozen=True)
class RuntimeDecision:
    runtime_class: RuntimeClass
    dominant_concern: str
    predicate_text: str


def classify_runtime(profile: WorkloadProfile) -> RuntimeDecision:
    if profile.unit_of_work == "session":
        text = (
            f"Session unit, {profile.duration_class}, "
            + ("mid-flight change" if profile.world_changes_midflight else "no mid-flight change")
        )
        return RuntimeDecision(RuntimeClass.CONVERSATIONAL, "Coordination", text)
    if profile.unit_of_work == "task":
        concern = "Control" if profile.external_side_effects else "Coordination"
        return RuntimeDecision(RuntimeClass.AUTONOMOUS, concern, f"Task unit, {profile.duration_class}, bounded duration")
    text = "Process unit, world changes mid-flight" if profile.world_changes_midflight else "Process unit, long pauses"
    return RuntimeDecision(RuntimeClass.LONG_HORIZON, "State", text)


@dataclass(frozen=True)
class SpineDecision:
    pattern: str | None  # "P5" | "P3" | None
    predicate_text: str
    fired: dict[str, bool]
    cost_review: bool = False


def choose_spine(profile: WorkloadProfile) -> SpineDecision:
    """Spine predicates: (1) pauses beyond the threshold or external waits,
    (2) state not reconstructible from input, (3) world changes mid-flight.

    All three: versioned state machine (P5). State reconstructible: the log
    itself is the durable artifact when pauses are long (P3), nothing
    otherwise. Short pauses alone: replayable log (P3). Long pauses over a
    static world: P3 with a cost-review flag instead of full P5.
    """
    p1 = profile.pauses_over_one_hour
    p2 = not profile.state_reconstructible_from_input
    p3 = profile.world_changes_midflight
    fired = {"long_pauses": p1, "state_not_reconstructible": p2, "world_changes": p3}

    if p1 and p2 and p3:
        return SpineDecision("P5", "(1), (2), (3) all true", fired)
    if not (p1 or p2 or p3):
        return SpineDecision(None, "All three spine predicates fail", fired)
    text = (
        f"(1) {'fires' if p1 else 'does not'}, "
        f"(2) {'fires' if p2 else 'does not'}, "
        f"(3) {'fires' if p3 else 'does not'}"
    )
    if not p2:
        return SpineDecision("P3" if p1 else None, text, fired)
    if not p1:
        return SpineDecision("P3", text, fired)
    return SpineDecision("P3", text, fired, cost_review=True)


@dataclass(frozen=True)
class CoordinationDecision:
    patterns: tuple[str, ...]  # subset of ("P1", "P2")
    predicate_text: str
    empty_selection: bool


def choose_coordination(profile: WorkloadProfile) -> CoordinationDecision:
    p1 = profile.single_outcome_owner and profile.subtasks_independent and profile.deterministic_merge_feasible
    p2 = profile.peers_with_side_effects or profile.partial_failure_tolerated

    patterns = tuple(p for p, hit in (("P1", p1), ("P2", p2)) if hit)
    if p1 and p2:
        text = (
            "Single owner plus external side-effects"
            if profile.peers_with_side_effects
            else "Single owner plus partial-failure peers"
        )
    elif p1:
        text = "Single owner, independent sub-tasks, deterministic merge"
    elif p2:
        parts = []
        if profile.peers_with_side_effects:
            parts.append("peers with external side-effects")
        if profile.partial_failure_tolerated:
            parts.append("partial failures tolerated")
        text = "; ".join(parts).capitalize()
    else:
        text = "No coordination predicate fired"
    return CoordinationDecision(patterns, text, empty_selection=not patterns)


@dataclass(frozen=True)
class ControlDecision:
    patterns: tuple[str, ...]  # subset of ("P4", "P6")
    coverage: str | None  # "full" | "light" | None
    enabled_planes: tuple[str, ...]
    deferred_planes: tuple[str, ...]
    predicate_text: str


def choose_control(profile: WorkloadProfile) -> ControlDecision:
    p4 = profile.external_side_effects or profile.wrong_write_cost_exceeds_latency_cost
    p6 = profile.legally_consequential or profile.cases_outside_policy_envelope or profile.auditors_ask_who_decided

    patterns = tuple(p for p, hit in (("P4", p4), ("P6", p6)) if hit)
    coverage = None
    enabled: tuple[str, ...] = ()
    deferred: tuple[str, ...] = ()
    if p6:
        if profile.legally_consequential:
            coverage = "full"
            enabled = ("kill_switch", "escalation", "approval", "throttling")
        else:
            coverage = "light"
            enabled = ("throttling",)
            deferred = ("kill_switch", "escalation", "approval")

    if p4 and p6:
        text = (
            "Side-effects plus legal consequence"
            if profile.legally_consequential
            else "Side-effects plus out-of-envelope cases"
        )
    elif p4:
        text = "Side-effects in proposed writes"
    elif p6:
        text = "Consequential decisions without side-effects"
    else:
        text = "No control predicate fired"
    return ControlDecision(patterns, coverage, enabled, deferred, text)


@dataclass(frozen=True)
class Selection:
    profile: WorkloadProfile
    runtime: RuntimeDecision
    spine: SpineDecision
    coordination: CoordinationDecision
    control: ControlDecision


def select(profile: WorkloadProfile) -> Selection:
    return Selection(
        profile=profile,
        runtime=classify_runtime(profile),
        spine=choose_spine(profile),
        coordination=choose_coordination(profile),
        control=choose_control(profile),
    )


# ---------------------------------------------------------------------------
# Decision record (six rows) and the contrast table

_CLASS_SIGNATURE = {
    RuntimeClass.CONVERSATIONAL: "Latency SLA misses",
    RuntimeClass.AUTONOMOUS: "Stale task context",
    RuntimeClass.LONG_HORIZON: "Latency budget violation",
}

_SPINE_SIGNATURE = {
    "P5": "Replay drift across model versions",
    "P3": "Replay drift on downstream synthesis",
    "None": "Over-engineered durability cost",
}

_COORDINATION_SIGNATURE = {
    "P1 + P2": "Partial-write inconsistency",
    "P1": "Conflicting sub-agent outputs",
    "P2": "Inconsistent partial aggregation",
    "None": "Unowned outcome",
}

_CONTROL_SIGNATURE = {
    "P4 + P6": "Hallucinated discounts shipping",
    "P4": "Out-of-policy writes shipping",
    "P6": "Undocumented consequential decisions",
    "None": "Ungoverned side-effects",
}

ADR_COLUMNS = ("Step", "Pattern", "Predicate that fired", "Failure signature if wrong")


@dataclass(frozen=True)
class AdrRow:
    step: str
    pattern: str
    predicate_fired: str
    failure_signature: str


@dataclass(frozen=True)
class Signoff:
    name: str
    date: str

    def __post_init__(self) -> None:
        if not self.name or not self.date:
            raise ValueError("signoff needs both a name and a date")


@dataclass(frozen=True)
class AdrRecord:
    workload: str
    rows: tuple[AdrRow, ...]
    signoff: Signoff | None = None

    @property
    def draft(self) -> bool:
        # The spine row is the expensive commitment; without a signed name
        # and date the record is a draft, loudly.
        return self.signoff is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "workload": self.workload,
            "rows": [
                {
                    "step": r.step,
                    "pattern": r.pattern,
                    "predicate_fired": r.predicate_fired,
                    "failure_signature": r.failure_signature,
                }
                for r in self.rows
            ],
            "signoff": {"name": self.signoff.name, "date": self.signoff.date} if self.signoff else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "AdrRecord":
        rows = tuple(
            AdrRow(r["step"], r["pattern"], r["predicate_fired"], r["failure_signature"]) for r in raw["rows"]
        )
        signoff = Signoff(**raw["signoff"]) if raw.get("signoff") else None
        return cls(raw["workload"], rows, signoff)

    @classmethod
    def from_json(cls, text: str) -> "AdrRecord":
        return cls.from_dict(json.loads(text))

    def render(self) -> str:
        """Fixed-width table; a DRAFT banner when the spine row lacks signoff."""
        header = list(ADR_COLUMNS)
        cells = [header] + [
            [r.step, r.pattern, r.predicate_fired, r.failure_signature] for r in self.rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(4)]
        lines = []
        if self.draft:
            lines.append("*** DRAFT: spine decision not signed off ***")
        else:
            lines.append(f"Signed off: {self.signoff.name}, {self.signoff.date}")
        lines.append(f"Workload: {self.workload}")
        sep = "-+-".join("-" * w for w in widths)
        lines.append(" | ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
        lines.append(sep)
        for row in cells[1:]:
            lines.append(" | ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        return "\n".join(lines)


def _join_or_none(patterns: tuple[str, ...]) -> str:
    return " + ".join(patterns) if patterns else "None"


def emit_adr(
    selection: Selection,
    model_version_tag: str,
    date_tag: str,
    signoff: Signoff | None = None,
) -> AdrRecord:
    """Produce the six-row decision record for a selection."""
    spine_pattern = selection.spine.pattern or "None"
    coordination_pattern = _join_or_none(selection.coordination.patterns)
    control_pattern = _join_or_none(selection.control.patterns)
    rows = (
        AdrRow(
            "Runtime class",
            selection.runtime.runtime_class.value,
            selection.runtime.predicate_text,
            _CLASS_SIGNATURE[selection.runtime.runtime_class],
        ),
        AdrRow("Spine", spine_pattern, selection.spine.predicate_text, _SPINE_SIGNATURE[spine_pattern]),
        AdrRow(
            "Coordination",
            coordination_pattern,
            selection.coordination.predicate_text,
            _COORDINATION_SIGNATURE[coordination_pattern],
        ),
        AdrRow("Control", control_pattern, selection.control.predicate_text, _CONTROL_SIGNATURE[control_pattern]),
        AdrRow("Sequence", "Console-first", "Observability precedes agent", "Blind operations"),
        AdrRow("Date / model ver.", date_tag, model_version_tag, "n/a"),
    )
    return AdrRecord(selection.profile.name, rows, signoff)


def contrast_row(selection: Selection, status: str) -> dict[str, str]:
    """One row of the cross-workload contrast table."""
    spine = selection.spine.pattern if selection.spine.pattern else "none"
    control = _join_or_none(selection.control.patterns)
    if selection.control.coverage and "P6" in selection.control.patterns:
        control = f"{control} {selection.control.coverage}"
    return {
        "workload": selection.profile.name,
        "class": selection.runtime.runtime_class.value,
        "spine": spine,
        "coordination": _join_or_none(selection.coordination.patterns),
        "control": control,
        "status": status,
    }


def contrast_table(entries: list[tuple[WorkloadProfile, str]]) -> list[dict[str, str]]:
    return [contrast_row(select(profile), status) for profile, status in entries]
