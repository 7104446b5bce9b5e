from __future__ import annotations

import random

import pytest

from des_ledger.bench_harness import (
    BenchConfig,
    BenchReport,
    StageResult,
    compare_to_envelope,
    generate_synthetic,
    pad_event,
    random_full_draft,
    run_benchmark,
)
from des_ledger.canonical_crypto import canonicalize
from des_ledger.event_model import TOP_LEVEL_GROUPS
from des_ledger.tiering import estimate_payload_size
from des_ledger.validator import validate


@pytest.mark.parametrize("tier", ["lightweight", "sampled", "full"])
def test_synthetic_valid_and_in_band(tier):
    drafts = generate_synthetic(tier, 7, 100)
    assert len(drafts) == 100
    for d in drafts:
        assert d.evidence_tier == tier
        assert validate(d, draft=True).valid
        assert estimate_payload_size(d).assessment == "within"


def test_full_synthetic_has_all_groups():
    for d in generate_synthetic("full", 7, 20):
        assert TOP_LEVEL_GROUPS <= set(d)


def test_synthetic_deterministic():
    assert generate_synthetic("sampled", 3, 10) == generate_synthetic("sampled", 3, 10)
    assert generate_synthetic("sampled", 3, 10) != generate_synthetic("sampled", 4, 10)


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate_synthetic("gold", 1, 1)
    with pytest.raises(ValueError):
        generate_synthetic("full", 1, 0)


def test_random_full_drafts_valid():
    rng = random.Random(5)
    for _ in range(200):
        assert validate(random_full_draft(rng), draft=True).valid


def test_pad_event():
    [d] = generate_synthetic("lightweight", 1, 1)
    padded = pad_event(d, 5120)
    assert abs(len(canonicalize(padded)) - 5120) <= 2
    assert validate(padded, draft=True).rules_evaluated == validate(d, draft=True).rules_evaluated


def result(tier, stage, eps, p50=0.1, size=300):
    return StageResult(tier, stage, "memory", 100, eps, p50, p50 * 2, size, "within")


def test_envelope_ratio_pass():
    report = BenchReport({}, {}, [result("lightweight", "seal_append", 830.0), result("full", "seal_append", 100.0, size=8000)])
    assert report.ratio() == pytest.approx(8.3)
    assessment = compare_to_envelope(report)
    assert assessment.passed
    assert assessment.verdict == "consistent with the feasibility envelope"


def test_envelope_band_failure_flagged():
    report = BenchReport({}, {}, [result("sampled", "hash", 1000.0, size=1126)])
    assessment = compare_to_envelope(report)
    assert not assessment.passed
    assert "sampled_band" in assessment.verdict


def test_envelope_slow_hash_and_low_ratio():
    report = BenchReport(
        {},
        {},
        [
            result("lightweight", "hash", 10.0, p50=1.5),
            result("lightweight", "seal_append", 150.0),
            result("full", "seal_append", 100.0, size=8000),
        ],
        rules_constant_lightweight=False,
    )
    failed = {c.name for c in compare_to_envelope(report).checks if not c.passed}
    assert failed == {"tier1_hash_sub_ms", "tier1_tier3_ratio", "tier1_validation_constant"}


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(runs=2)
    with pytest.raises(ValueError):
        BenchConfig(tiers=("gold",))


def test_small_benchmark_run(tmp_path):
    config = BenchConfig(
        tiers=("lightweight", "full"),
        stages=("hash", "validate", "seal_append_checkpoint"),
        events=40,
        warmup=5,
        fsync=False,
        checkpoint_interval=16,
        store_dir=str(tmp_path),
    )
    report = run_benchmark(config)
    assert {(r.tier, r.stage) for r in report.results} == {
        (t, s) for t in config.tiers for s in config.stages
    }
    for r in report.results:
        assert len(r.run_throughputs) == 3 and r.throughput_eps > 0
        assert r.band_assessment == "within"
    assert report.rules_constant_lightweight is True
    data = report.to_dict()
    assert "tier1_over_tier3.hash" in data["ratios"]
    assert "events/s" in report.format_table()
