"""Selection predicates, the six-row decision record, and the fixture profiles."""

from __future__ import annotations

import json
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from agentrt.profiles import CONTRAST_ENTRIES, FIXTURES, load_profile
from agentrt.selector import (
    ADR_COLUMNS,
    AdrRecord,
    ProfileError,
    RuntimeClass,
    Signoff,
    WorkloadProfile,
    choose_control,
    choose_coordination,
    choose_spine,
    classify_runtime,
    contrast_row,
    contrast_table,
    emit_adr,
    pauses_over_threshold,
    select,
)


def base_profile(**overrides) -> WorkloadProfile:
    fields = dict(
        name="synthetic",
        unit_of_work="task",
        duration_class="minutes",
        world_changes_midflight=False,
        pauses_over_one_hour=False,
        state_reconstructible_from_input=True,
        external_side_effects=False,
        single_outcome_owner=False,
        subtasks_independent=False,
        deterministic_merge_feasible=False,
        peers_with_side_effects=False,
        partial_failure_tolerated=False,
        wrong_write_cost_exceeds_latency_cost=False,
        legally_consequential=False,
        cases_outside_policy_envelope=False,
        auditors_ask_who_decided=False,
    )
    fields.update(overrides)
    return WorkloadProfile(**fields)


# -- runtime classification


def test_session_unit_is_conversational():
    decision = classify_runtime(base_profile(unit_of_work="session", duration_class="seconds"))
    assert decision.runtime_class is RuntimeClass.CONVERSATIONAL
    assert decision.dominant_concern == "Coordination"


def test_task_unit_concern_follows_side_effects():
    no_writes = classify_runtime(base_profile(unit_of_work="task"))
    assert no_writes.runtime_class is RuntimeClass.AUTONOMOUS
    assert no_writes.dominant_concern == "Coordination"
    with_writes = classify_runtime(base_profile(unit_of_work="task", external_side_effects=True))
    assert with_writes.dominant_concern == "Control"


def test_process_unit_is_long_horizon():
    decision = classify_runtime(base_profile(unit_of_work="process", duration_class="hours_to_days"))
    assert decision.runtime_class is RuntimeClass.LONG_HORIZON
    assert decision.dominant_concern == "State"


def test_pause_threshold_is_exclusive():
    assert not pauses_over_threshold(3_600_000)
    assert pauses_over_threshold(3_600_001)


# -- spine truth table


SPINE_TABLE = {
    # (pauses, not-reconstructible, world-changes) -> (pattern, cost_review)
    (True, True, True): ("P5", False),
    (True, True, False): ("P3", True),
    (True, False, True): ("P3", False),
    (True, False, False): ("P3", False),
    (False, True, True): ("P3", False),
    (False, True, False): ("P3", False),
    (False, False, True): (None, False),
    (False, False, False): (None, False),
}


@pytest.mark.parametrize("combo,expected", sorted(SPINE_TABLE.items()))
def test_spine_truth_table(combo, expected):
    pauses, not_reconstructible, changes = combo
    decision = choose_spine(
        base_profile(
            pauses_over_one_hour=pauses,
            state_reconstructible_from_input=not not_reconstructible,
            world_changes_midflight=changes,
        )
    )
    assert (decision.pattern, decision.cost_review) == expected
    assert decision.fired == {
        "long_pauses": pauses,
        "state_not_reconstructible": not_reconstructible,
        "world_changes": changes,
    }


# -- coordination


def test_orchestrator_needs_all_three_conditions():
    full = base_profile(single_outcome_owner=True, subtasks_independent=True, deterministic_merge_feasible=True)
    assert choose_coordination(full).patterns == ("P1",)
    for hole in ("single_outcome_owner", "subtasks_independent", "deterministic_merge_feasible"):
        partial = replace(full, **{hole: False})
        assert "P1" not in choose_coordination(partial).patterns


def test_saga_fires_on_either_condition():
    assert choose_coordination(base_profile(peers_with_side_effects=True)).patterns == ("P2",)
    assert choose_coordination(base_profile(partial_failure_tolerated=True)).patterns == ("P2",)


def test_both_coordination_patterns_can_fire():
    decision = choose_coordination(
        base_profile(
            single_outcome_owner=True,
            subtasks_independent=True,
            deterministic_merge_feasible=True,
            peers_with_side_effects=True,
        )
    )
    assert decision.patterns == ("P1", "P2")
    assert not decision.empty_selection


def test_empty_coordination_is_flagged():
    decision = choose_coordination(base_profile())
    assert decision.patterns == ()
    assert decision.empty_selection


# -- control


def test_gate_fires_on_writes_or_write_cost():
    assert choose_control(base_profile(external_side_effects=True)).patterns == ("P4",)
    assert choose_control(base_profile(wrong_write_cost_exceeds_latency_cost=True)).patterns == ("P4",)
    assert choose_control(base_profile()).patterns == ()


def test_audit_pattern_fires_on_any_consequence_signal():
    for flag in ("legally_consequential", "cases_outside_policy_envelope", "auditors_ask_who_decided"):
        assert "P6" in choose_control(base_profile(**{flag: True})).patterns


def test_legal_consequence_forces_full_plane_coverage():
    decision = choose_control(base_profile(legally_consequential=True))
    assert decision.coverage == "full"
    assert set(decision.enabled_planes) == {"kill_switch", "escalation", "approval", "throttling"}
    assert decision.deferred_planes == ()


def test_light_coverage_defers_three_planes():
    decision = choose_control(base_profile(cases_outside_policy_envelope=True))
    assert decision.coverage == "light"
    assert decision.enabled_planes == ("throttling",)
    assert set(decision.deferred_planes) == {"kill_switch", "escalation", "approval"}


def test_no_consequence_signal_means_no_coverage_plan():
    decision = choose_control(base_profile(external_side_effects=True))
    assert decision.coverage is None
    assert decision.enabled_planes == ()


# -- profile validation


def test_profile_rejects_bad_unit_and_duration():
    with pytest.raises(ProfileError):
        base_profile(unit_of_work="sprint")
    with pytest.raises(ProfileError):
        base_profile(duration_class="weeks")


def test_from_dict_requires_every_question_answered():
    raw = base_profile().to_dict()
    del raw["auditors_ask_who_decided"]
    with pytest.raises(ProfileError, match="auditors_ask_who_decided"):
        WorkloadProfile.from_dict(raw)


def test_from_dict_rejects_stray_fields():
    raw = base_profile().to_dict()
    raw["unexepected_extra"] = True
    with pytest.raises(ProfileError, match="unexepected_extra"):
        WorkloadProfile.from_dict(raw)


def test_profile_round_trips_through_dict():
    profile = base_profile(unit_of_work="process", duration_class="hours_to_days", legally_consequential=True)
    assert WorkloadProfile.from_dict(profile.to_dict()) == profile


# -- decision record


def test_record_has_six_rows_in_fixed_order():
    record = emit_adr(select(FIXTURES["renewal"]), "model-x", "2026 Q2")
    assert [r.step for r in record.rows] == [
        "Runtime class",
        "Spine",
        "Coordination",
        "Control",
        "Sequence",
        "Date / model ver.",
    ]
    assert record.rows[4].pattern == "Console-first"
    assert record.rows[5].pattern == "2026 Q2"
    assert record.rows[5].predicate_fired == "model-x"
    assert len(ADR_COLUMNS) == 4


def test_unsigned_record_renders_draft_banner():
    record = emit_adr(select(FIXTURES["renewal"]), "model-x", "2026 Q2")
    assert record.draft
    rendered = record.render()
    assert rendered.splitlines()[0] == "*** DRAFT: spine decision not signed off ***"
    assert "Workload: Contract Renewal" in rendered


def test_signed_record_names_the_signer():
    record = emit_adr(select(FIXTURES["renewal"]), "model-x", "2026 Q2", signoff=Signoff("Dana", "2026-04-01"))
    assert not record.draft
    assert record.render().splitlines()[0] == "Signed off: Dana, 2026-04-01"


def test_signoff_requires_both_parts():
    with pytest.raises(ValueError):
        Signoff("Dana", "")
    with pytest.raises(ValueError):
        Signoff("", "2026-04-01")


def test_record_json_round_trip():
    record = emit_adr(select(FIXTURES["port-in"]), "model-x", "2026 Q2", signoff=Signoff("Dana", "2026-04-01"))
    again = AdrRecord.from_json(record.to_json())
    assert again == record
    unsigned = emit_adr(select(FIXTURES["port-in"]), "model-x", "2026 Q2")
    assert AdrRecord.from_json(unsigned.to_json()) == unsigned


def test_render_is_aligned():
    rendered = emit_adr(select(FIXTURES["billing-assist"]), "m", "d").render()
    table_lines = rendered.splitlines()[2:]
    assert len({len(line) for line in table_lines if " | " in line}) == 1


def test_failure_signatures_follow_selected_patterns():
    record = emit_adr(select(FIXTURES["billing-assist"]), "m", "d")
    by_step = {r.step: r for r in record.rows}
    assert by_step["Spine"].pattern == "None"
    assert by_step["Spine"].failure_signature == "Over-engineered durability cost"
    assert by_step["Control"].failure_signature == "Out-of-policy writes shipping"


# -- contrast table


EXPECTED_CONTRAST = [
    ("Billing & Payment Assist", "Conversational", "none", "P1", "P4", "worked"),
    ("Order Fall-out Scanner", "Autonomous", "P3", "P2", "P4 + P6 light", "worked"),
    ("Number Port-in", "Long-Horizon", "P5", "P1 + P2", "P4 + P6 full", "worked"),
    ("Lead Warming", "Long-Horizon", "P3", "P1", "P4 + P6 light", "worked"),
    ("Contract Renewal", "Long-Horizon", "P5", "P1 + P2", "P4 + P6 full", "reference"),
]


def test_fixture_contrast_table_is_pinned():
    rows = contrast_table(CONTRAST_ENTRIES)
    got = [(r["workload"], r["class"], r["spine"], r["coordination"], r["control"], r["status"]) for r in rows]
    assert got == EXPECTED_CONTRAST


def test_coverage_suffix_only_when_audit_pattern_selected():
    gate_only = contrast_row(select(base_profile(external_side_effects=True)), "x")
    assert gate_only["control"] == "P4"
    audited = contrast_row(select(base_profile(legally_consequential=True)), "x")
    assert audited["control"] == "P6 full"


# -- fixture loading


def test_load_profile_by_fixture_name():
    assert load_profile("renewal") is FIXTURES["renewal"]


def test_load_profile_from_json_file(tmp_path):
    path = tmp_path / "custom.json"
    path.write_text(json.dumps(base_profile(name="Custom Flow").to_dict()), encoding="utf-8")
    assert load_profile(path).name == "Custom Flow"


def test_load_profile_unknown_source(tmp_path):
    with pytest.raises(ProfileError):
        load_profile(tmp_path / "missing.json")


@given(
    unit=st.sampled_from(["session", "task", "process"]),
    bools=st.lists(st.booleans(), min_size=13, max_size=13),
)
def test_every_profile_yields_a_complete_record(unit, bools):
    flags = dict(
        zip(
            (
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
            ),
            bools,
        )
    )
    record = emit_adr(select(base_profile(unit_of_work=unit, **flags)), "m", "d")
    assert len(record.rows) == 6
    assert all(r.failure_signature for r in record.rows)
