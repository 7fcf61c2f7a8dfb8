"""Fixture workload profiles.

Five filled-in intake profiles covering the pattern space: a conversational
assist tool, an autonomous scanner, two long-horizon workflows with heavy
compliance needs, and the contract-renewal workflow the simulation runs.
They double as selector regression fixtures and as CLI examples.
"""

from __future__ import annotations

import json
from pathlib import Path

from agentrt.selector import ProfileError, WorkloadProfile

BILLING_ASSIST = WorkloadProfile(
    name="Billing & Payment Assist",
    unit_of_work="session",
    duration_class="seconds",
    world_changes_midflight=False,
    pauses_over_one_hour=False,
    state_reconstructible_from_input=True,  # everything lives in the active call
    external_side_effects=True,  # suggested payment terms reach the customer
    single_outcome_owner=True,
    subtasks_independent=True,  # parallel read-only lookups
    deterministic_merge_feasible=True,
    peers_with_side_effects=False,
    partial_failure_tolerated=False,
    wrong_write_cost_exceeds_latency_cost=True,
    legally_consequential=False,
    cases_outside_policy_envelope=False,
    auditors_ask_who_decided=False,
)

FALLOUT_SCANNER = WorkloadProfile(
    name="Order Fall-out Scanner",
    unit_of_work="task",
    duration_class="minutes",
    world_changes_midflight=False,
    pauses_over_one_hour=False,
    state_reconstructible_from_input=False,  # needs the upstream event stream
    external_side_effects=True,  # writes pre-staged notes back
    single_outcome_owner=False,  # symmetric peers, no single orchestrated answer
    subtasks_independent=True,
    deterministic_merge_feasible=False,
    peers_with_side_effects=True,
    partial_failure_tolerated=True,  # some sources are always down
    wrong_write_cost_exceeds_latency_cost=False,
    legally_consequential=False,
    cases_outside_policy_envelope=True,  # fall-outs are the exception path by definition
    auditors_ask_who_decided=False,
)

NUMBER_PORT_IN = WorkloadProfile(
    name="Number Port-in",
    unit_of_work="process",
    duration_class="hours_to_days",
    world_changes_midflight=True,  # carriers change state under the workflow
    pauses_over_one_hour=True,
    state_reconstructible_from_input=False,
    external_side_effects=True,
    single_outcome_owner=True,
    subtasks_independent=True,
    deterministic_merge_feasible=True,
    peers_with_side_effects=True,  # cross-carrier writes need sagas
    partial_failure_tolerated=False,
    wrong_write_cost_exceeds_latency_cost=True,
    legally_consequential=True,  # regulated port windows
    cases_outside_policy_envelope=True,
    auditors_ask_who_decided=True,
)

LEAD_WARMING = WorkloadProfile(
    name="Lead Warming",
    unit_of_work="process",
    duration_class="hours_to_days",
    world_changes_midflight=True,
    pauses_over_one_hour=True,
    state_reconstructible_from_input=True,  # touch log plus current score rebuilds it
    external_side_effects=True,  # outbound touches
    single_outcome_owner=True,
    subtasks_independent=True,  # channels don't depend on each other
    deterministic_merge_feasible=True,
    peers_with_side_effects=False,  # failed touches are just events
    partial_failure_tolerated=False,
    wrong_write_cost_exceeds_latency_cost=False,
    legally_consequential=False,
    cases_outside_policy_envelope=True,  # high-value leads above threshold
    auditors_ask_who_decided=False,
)

CONTRACT_RENEWAL = WorkloadProfile(
    name="Contract Renewal",
    unit_of_work="process",
    duration_class="hours_to_days",
    world_changes_midflight=True,  # products EOL, competitors move, mergers land
    pauses_over_one_hour=True,
    state_reconstructible_from_input=False,
    external_side_effects=True,  # billing writes, outreach sends
    single_outcome_owner=True,
    subtasks_independent=True,
    deterministic_merge_feasible=True,
    peers_with_side_effects=True,
    partial_failure_tolerated=False,
    wrong_write_cost_exceeds_latency_cost=True,
    legally_consequential=True,  # discounts are financially consequential
    cases_outside_policy_envelope=True,  # mergers, unusual demands
    auditors_ask_who_decided=True,
)

FIXTURES: dict[str, WorkloadProfile] = {
    "billing-assist": BILLING_ASSIST,
    "fallout-scanner": FALLOUT_SCANNER,
    "port-in": NUMBER_PORT_IN,
    "lead-warming": LEAD_WARMING,
    "renewal": CONTRACT_RENEWAL,
}

# Contrast-table entries in canonical order: four worked applications of the
# methodology, then the reference workflow this package simulates end to end.
CONTRAST_ENTRIES: list[tuple[WorkloadProfile, str]] = [
    (BILLING_ASSIST, "worked"),
    (FALLOUT_SCANNER, "worked"),
    (NUMBER_PORT_IN, "worked"),
    (LEAD_WARMING, "worked"),
    (CONTRACT_RENEWAL, "reference"),
]


def load_profile(source: str | Path) -> WorkloadProfile:
    """Load a profile from a fixture name or a JSON file path."""
    key = str(source)
    if key in FIXTURES:
        return FIXTURES[key]
    path = Path(source)
    if not path.exists():
        raise ProfileError(f"no fixture named {key!r} and no file at {path}")
    return WorkloadProfile.from_dict(json.loads(path.read_text(encoding="utf-8")))
