from __future__ import annotations

import json

import pytest

from des_ledger.canonical_crypto import canonicalize
from des_ledger.event_model import DecisionEvent
from des_ledger.tiering import (
    TIER_BANDS,
    TierPolicy,
    apply_policy,
    assess_size,
    estimate_payload_size,
    project_to_tier,
    select_tier,
)
from des_ledger.validator import validate

from conftest import full_draft, load_fixture, minimal_draft


def test_override_forces_full():
    draft = load_fixture("r4_pass_override_true_complete")
    assert select_tier(draft, TierPolicy()) == "full"
    assert select_tier(draft, TierPolicy(force_tier3_on_override=False)) == "lightweight"


def test_human_decision_forces_full():
    assert select_tier(load_fixture("r3_pass_human_decision_with_attribution"), TierPolicy()) == "full"


def test_risk_floor():
    policy = TierPolicy(min_tier_for_risk={"low": "lightweight", "medium": "lightweight", "high": "sampled", "critical": "sampled"})
    draft = full_draft(decision_quality_indicators__decision_risk_level="critical")
    assert select_tier(draft, policy) in ("sampled", "full")
    assert select_tier(draft, TierPolicy()) == "full"


def test_alerts_force_full_or_sampled():
    draft = full_draft(decision_quality_indicators__threshold_alerts=["drift"])
    assert select_tier(draft, TierPolicy()) == "full"
    assert select_tier(draft, TierPolicy(force_tier3_on_alerts=False)) == "sampled"


def test_degenerate_policy_gives_default():
    draft = full_draft(decision_quality_indicators__decision_risk_level="low")
    assert select_tier(draft, TierPolicy()) == "lightweight"
    assert select_tier(draft, TierPolicy(default_tier="sampled")) == "sampled"


def test_sampling_is_deterministic_and_rate_bound():
    policy = TierPolicy(tier2_sample_rate=0.3, seed=11)
    drafts = [minimal_draft(i) for i in range(2000)]
    first = [select_tier(d, policy) for d in drafts]
    assert first == [select_tier(d, policy) for d in drafts]
    share = first.count("sampled") / len(first)
    assert 0.25 < share < 0.35
    other_seed = [select_tier(d, TierPolicy(tier2_sample_rate=0.3, seed=12)) for d in drafts]
    assert other_seed != first
    assert all(select_tier(d, TierPolicy(tier2_sample_rate=1.0)) == "sampled" for d in drafts[:50])


def test_policy_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        TierPolicy(default_tier="gold")
    with pytest.raises(ValueError):
        TierPolicy(tier2_sample_rate=1.5)
    with pytest.raises(ValueError):
        TierPolicy.from_dict({"bogus": 1})
    policy = TierPolicy(tier2_sample_rate=0.1, seed=3)
    path = tmp_path / "policy.json"
    path.write_text(json.dumps(policy.to_dict()))
    assert TierPolicy.load(path) == policy


def test_full_projection_is_identity():
    draft = full_draft()
    assert project_to_tier(draft, "full") == draft


def test_lightweight_projection_drops_model_inference():
    light = project_to_tier(full_draft(), "lightweight")
    assert not light.has_path("decision_logic.model_inference")
    assert light.evidence_tier == "lightweight"
    assert validate(light, draft=True).valid


def test_lightweight_projection_keeps_override_content():
    draft = load_fixture("r4_pass_override_true_complete").replace("temporal_metadata.evidence_tier", "full")
    light = project_to_tier(draft, "lightweight")
    hor = light["human_override_record"]
    for key in ("original_output", "overridden_output", "override_timestamp", "override_actor", "override_rationale"):
        assert key in hor
    assert validate(light, draft=True).valid


def test_projection_keeps_human_over_human_link():
    draft = load_fixture("r5_pass_human_over_human_linked").replace("temporal_metadata.evidence_tier", "full")
    draft = draft.replace("decision_quality_indicators", {"decision_risk_level": "high"})
    for tier in ("sampled", "lightweight"):
        assert validate(project_to_tier(draft, tier), draft=True).valid


def test_sampled_projection_hashes_large_inputs():
    sampled = project_to_tier(full_draft(), "sampled")
    inputs = {r["input_id"]: r["input_value"] for r in sampled.get_path("decision_context.inputs")}
    assert inputs["income"] == 52000
    assert len(inputs["history"]) == 64 and inputs["history"] != "x" * 400
    assert validate(sampled, draft=True).valid


def test_projection_sizes_monotone():
    draft = full_draft()
    sizes = [len(canonicalize(project_to_tier(draft, t))) for t in ("full", "sampled", "lightweight")]
    assert sizes == sorted(sizes, reverse=True)


def test_apply_policy_projects_down():
    draft = full_draft(decision_quality_indicators__decision_risk_level="low")
    assert apply_policy(draft, TierPolicy()).evidence_tier == "lightweight"


def test_bands_and_assessment():
    assert TIER_BANDS["sampled"] == (2048, 5120)
    assert assess_size(199, "lightweight").assessment == "below"
    assert assess_size(200, "lightweight").assessment == "within"
    assert assess_size(501, "lightweight").assessment == "above"
    assert assess_size(100, None).assessment == "unknown"


def test_minimal_event_within_band():
    est = estimate_payload_size(minimal_draft())
    assert est.assessment == "within", est


def test_empty_strings_event_sits_at_lower_edge():
    # required key names alone are about 250 canonical bytes
    draft = DecisionEvent(
        {
            "schema_version": "",
            "decision_context": {"decision_id": "", "decision_type": ""},
            "decision_logic": {"logic_type": "", "output": ""},
            "human_override_record": {"override_occurred": False},
            "temporal_metadata": {"event_timestamp": "", "evidence_tier": "lightweight"},
        }
    )
    est = estimate_payload_size(draft)
    assert est.size == 250 and est.assessment == "within"
    assert est.to_dict()["band"] == [200, 500]


def test_degenerate_event_flagged_below():
    draft = DecisionEvent({"decision_logic": {"output": ""}, "temporal_metadata": {"evidence_tier": "lightweight"}})
    assert estimate_payload_size(draft).assessment == "below"
