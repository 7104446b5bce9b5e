from __future__ import annotations

import pytest

from des_ledger.enrichment import (
    EnrichmentRecord,
    compute_link_hash,
    create_enrichment,
    resolve_view,
    verify_enrichment_signature,
)
from des_ledger.errors import FormatError, StaleEnrichment, TargetUnsealed
from des_ledger.event_model import serialize_event

from conftest import minimal_draft, sealed_chain

WHEN = "2026-04-01T09:00:00.000Z"


def test_ground_truth_leaves_target_untouched():
    [target] = sealed_chain(1)
    before = serialize_event(target)
    record = create_enrichment(target, "ground_truth", {"actual": "default"}, WHEN)
    assert serialize_event(target) == before
    assert record.decision_id == target.decision_id
    assert record.link_hash == compute_link_hash(target.current_hash, {"actual": "default"})
    assert record.binds_to(target)


def test_unsealed_target_rejected():
    with pytest.raises(TargetUnsealed):
        create_enrichment(minimal_draft(), "ground_truth", {"actual": 1})


def test_two_enrichments_distinct_ids():
    [target] = sealed_chain(1)
    a = create_enrichment(target, "ground_truth", {"v": 1}, WHEN)
    b = create_enrichment(target, "quality_update", {"v": 2}, WHEN)
    assert a.enrichment_id != b.enrichment_id
    assert a.decision_id == b.decision_id


def test_view_orders_by_created_at():
    [target] = sealed_chain(1)
    late = create_enrichment(target, "ground_truth", {"v": 2}, "2026-05-01T00:00:00.000Z")
    early = create_enrichment(target, "acme:label", {"v": 1}, WHEN)
    view = resolve_view(target, [late, early])
    assert [e.payload["v"] for e in view.enrichments] == [1, 2]
    assert view.base is target
    assert view.of_kind("ground_truth") == (late,)
    assert resolve_view(target, []).enrichments == ()


def test_stale_binding_detected():
    chain = sealed_chain(2)
    record = create_enrichment(chain[0], "ground_truth", {"v": 1}, WHEN)
    forged = EnrichmentRecord(**{**record.to_dict(), "decision_id": chain[1].decision_id})
    with pytest.raises(StaleEnrichment):
        resolve_view(chain[1], [forged])
    other_form = chain[0].replace("decision_logic.output", "changed")
    from des_ledger.chain_integrity import ChainStreamState, seal_event

    resealed = seal_event(ChainStreamState("sys-a"), other_form.remove("temporal_metadata.hash_chain"))
    with pytest.raises(StaleEnrichment):
        resolve_view(resealed, [record])
    with pytest.raises(StaleEnrichment):
        resolve_view(chain[1], [record])


def test_record_validation():
    [target] = sealed_chain(1)
    with pytest.raises(FormatError):
        create_enrichment(target, "free text kind", {"v": 1})
    with pytest.raises(FormatError):
        create_enrichment(target, "ground_truth", {"v": 1}, "yesterday")
    with pytest.raises(FormatError):
        EnrichmentRecord.from_dict({"kind": "ground_truth"})


def test_round_trip_dict():
    [target] = sealed_chain(1)
    record = create_enrichment(target, "ground_truth", {"nested": {"a": [1, 2]}}, WHEN)
    assert EnrichmentRecord.from_dict(record.to_dict()) == record


def test_signed_enrichment(signer):
    [target] = sealed_chain(1)
    record = create_enrichment(target, "ground_truth", {"v": 1}, WHEN, signer=signer)
    assert record.digital_signature["signer_id"] == "signer-1"
    assert verify_enrichment_signature(record, signer.public_key())
    tampered = EnrichmentRecord(**{**record.to_dict(), "created_at": "2026-04-02T09:00:00.000Z"})
    assert not verify_enrichment_signature(tampered, signer.public_key())
    assert not verify_enrichment_signature(create_enrichment(target, "ground_truth", {"v": 1}), signer.public_key())
