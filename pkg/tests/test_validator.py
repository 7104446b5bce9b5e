from __future__ import annotations

import json
import time

import pytest

from des_ledger.chain_integrity import ChainStreamState, seal_event
from des_ledger.validator import RULES, rule_catalog, validate, validate_batch

from conftest import FIXTURES, VALIDATION_DIR, full_draft, load_fixture, minimal_draft

EXPECTED = json.loads((FIXTURES / "validation_expected.json").read_text())


def test_fixture_manifest_matches_directory():
    assert sorted(p.stem for p in VALIDATION_DIR.glob("*.json")) == sorted(EXPECTED)
    assert len(EXPECTED) >= 26


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_fixture_matrix(name):
    report = validate(load_fixture(name), draft=True)
    want = EXPECTED[name]
    assert report.valid is want["valid"], report.to_dict()
    assert sorted(report.rule_ids()) == sorted(want["rules"])


def test_every_rule_family_has_pass_and_fail():
    families = {r.rule_id for r in RULES}
    failing = {rule for e in EXPECTED.values() for rule in e["rules"]}
    passing = {name.split("_")[0].upper() for name, e in EXPECTED.items() if e["valid"]}
    assert families <= failing
    for family in ("R1", "R2A", "R2B", "R2C", "R2D", "R3", "R4", "R5", "R6"):
        assert family in passing, family


def test_r2a_violation_names_path():
    report = validate(load_fixture("r2a_fail_sampled_ml_without_inference"), draft=True)
    [v] = report.violations
    assert v.path == "decision_logic.model_inference"


def test_tier_override_changes_gating():
    event = load_fixture("r2a_pass_lightweight_ml_without_inference")
    assert validate(event, draft=True).valid
    report = validate(event, tier="sampled", draft=True)
    assert {"R2a", "R2e"} <= report.rule_ids()


def test_rules_evaluated_depends_only_on_tier():
    small = minimal_draft()
    big = small.replace("bench:padding", "x" * 5000)
    assert validate(small, draft=True).rules_evaluated == validate(big, draft=True).rules_evaluated == 6
    assert validate(full_draft(), draft=True).rules_evaluated == 11


def test_sealed_mode_requires_chain_fields():
    draft = minimal_draft()
    assert validate(draft).rule_ids() == {"R1"}
    sealed = seal_event(ChainStreamState("sys-a"), draft)
    assert validate(sealed).valid


def test_no_short_circuit():
    event = load_fixture("r1_fail_missing_decision_type").replace("decision_logic.logic_type", "rule_based:x")
    assert validate(event, draft=True).rule_ids() == {"R1", "R6"}


def test_override_output_mismatch_is_warning_only():
    event = load_fixture("r4_pass_override_true_complete").replace("decision_logic.output", {"score": 0.9})
    report = validate(event, draft=True)
    assert report.valid
    assert report.warnings


def test_validate_batch():
    assert validate_batch([]) == []
    reports = validate_batch([minimal_draft(), load_fixture("r3_fail_human_decision_without_attribution")], draft=True)
    assert [r.valid for r in reports] == [True, False]


def test_catalog_lists_every_rule():
    catalog = rule_catalog()
    assert [c["rule_id"] for c in catalog] == ["R1", "R2a", "R2b", "R2c", "R2d", "R2e", "R3", "R4", "R4a", "R5", "R6"]
    assert {c["tier_applicability"] for c in catalog} == {"all", "tier2+"}


def test_matrix_runs_fast():
    events = [load_fixture(n) for n in EXPECTED]
    start = time.perf_counter()
    for _ in range(10):
        validate_batch(events, draft=True)
    assert time.perf_counter() - start < 5.0
