from __future__ import annotations

import hashlib
import math

import pytest

from des_ledger.chain_integrity import (
    GENESIS_HASH,
    PAD_NODE,
    ChainStreamState,
    InclusionProof,
    build_checkpoint,
    checkpoint_from_leaves,
    inclusion_proof,
    merkle_root,
    seal_and_append,
    seal_event,
    verify_chain,
    verify_checkpoints,
    verify_inclusion,
)
from des_ledger.errors import AlreadySealed, BatchGapError, RejectedInvalid, SealPreconditionError, StreamMismatch

from conftest import load_fixture, minimal_draft, sealed_chain


def leaves(n: int) -> list[str]:
    return [hashlib.sha256(str(i).encode()).hexdigest() for i in range(n)]


def h(*parts: bytes) -> bytes:
    return hashlib.sha256(b"".join(parts)).digest()


def test_genesis_and_sequence():
    chain = sealed_chain(3)
    assert chain[0].previous_hash == GENESIS_HASH
    assert [e.sequence_number for e in chain] == [1, 2, 3]
    assert chain[1].previous_hash == chain[0].current_hash
    assert verify_chain(chain).clean


def test_seal_rejects_sealed_and_foreign_stream():
    sealed = sealed_chain(1)[0]
    with pytest.raises(AlreadySealed):
        seal_event(ChainStreamState("sys-a"), sealed)
    with pytest.raises(StreamMismatch):
        seal_event(ChainStreamState("sys-b"), minimal_draft(0, system_id="sys-a"))


def test_seal_and_append_rejects_invalid_without_advancing():
    state = ChainStreamState("sys-a")
    bad = load_fixture("r4_fail_override_false_with_original_output")
    with pytest.raises(RejectedInvalid) as info:
        seal_and_append(state, bad)
    assert info.value.report.rule_ids() == {"R4"}
    sealed, new_state = seal_and_append(state, minimal_draft())
    assert new_state.last_sequence == 1 and new_state.last_hash == sealed.current_hash


def test_deleting_event_is_a_sequence_gap():
    chain = sealed_chain(12)
    del chain[9]  # event with sequence 10
    report = verify_chain(chain)
    kinds = {f.kind for f in report.findings}
    assert {"sequence_gap", "link_mismatch"} <= kinds
    assert all(f.index == 9 for f in report.findings)


def test_modified_field_is_hash_mismatch():
    chain = sealed_chain(5)
    chain[2] = chain[2].replace("decision_logic.output", {"score": 0.0})
    report = verify_chain(chain)
    assert [(f.kind, f.index) for f in report.findings] == [("hash_mismatch", 2)]


def test_reorder_and_duplicate_detected():
    chain = sealed_chain(4)
    kinds = {f.kind for f in verify_chain([chain[0], chain[2], chain[1], chain[3]]).findings}
    assert "sequence_regression" in kinds
    kinds = {f.kind for f in verify_chain([chain[0], chain[1], chain[1]]).findings}
    assert "sequence_duplicate" in kinds


def test_unsealed_event_in_chain():
    chain = sealed_chain(2)
    chain.append(minimal_draft(9))
    assert "unsealed" in {f.kind for f in verify_chain(chain).findings}


def test_verify_from_anchor():
    chain = sealed_chain(10)
    anchor = ChainStreamState("sys-a", 4, chain[3].current_hash)
    assert verify_chain(chain[4:], anchor=anchor).clean
    assert not verify_chain(chain[4:]).clean


def test_timestamp_regression_is_warning():
    state = ChainStreamState("sys-a")
    a = seal_event(state, minimal_draft(0, event_timestamp="2026-03-01T12:00:01.000Z"))
    b = seal_event(state.advance(a), minimal_draft(1, event_timestamp="2026-03-01T12:00:00.000Z"))
    report = verify_chain([a, b])
    assert report.clean
    assert [w.kind for w in report.warnings] == ["timestamp_regression"]


def test_four_leaf_root_hand_computed():
    ls = leaves(4)
    b = [bytes.fromhex(x) for x in ls]
    expected = h(h(b[0], b[1]), h(b[2], b[3])).hex()
    assert merkle_root(ls) == expected


def test_three_leaf_root_pads_with_empty_hash():
    ls = leaves(3)
    b = [bytes.fromhex(x) for x in ls]
    assert PAD_NODE == hashlib.sha256(b"").digest()
    assert merkle_root(ls) == h(h(b[0], b[1]), h(b[2], PAD_NODE)).hex()


def test_single_leaf_root_is_leaf():
    [leaf] = leaves(1)
    assert merkle_root([leaf]) == leaf
    assert inclusion_proof([leaf], 0).siblings == ()


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7, 8, 9, 33])
def test_all_proofs_verify(n):
    ls = leaves(n)
    root = merkle_root(ls)
    for i in range(n):
        proof = inclusion_proof(ls, i)
        assert len(proof.siblings) == math.ceil(math.log2(n))
        assert verify_inclusion(proof, root)
        assert verify_inclusion(InclusionProof.from_dict(proof.to_dict()), root)


def test_1024_leaf_proof_length():
    ls = leaves(1024)
    assert len(inclusion_proof(ls, 517).siblings) == 10


def test_tampered_proof_fails():
    ls = leaves(7)
    root = merkle_root(ls)
    proof = inclusion_proof(ls, 3)
    wrong_leaf = InclusionProof(3, leaves(8)[7], proof.siblings)
    assert not verify_inclusion(wrong_leaf, root)
    flipped = InclusionProof(3, proof.leaf_hash, proof.siblings[::-1])
    assert not verify_inclusion(flipped, root)


def test_merkle_rejects_bad_input():
    with pytest.raises(ValueError):
        merkle_root([])
    with pytest.raises(ValueError):
        merkle_root(["ABC"])
    with pytest.raises(IndexError):
        inclusion_proof(leaves(2), 2)


def test_checkpoints_chain_and_verify():
    chain = sealed_chain(10)
    cp1 = build_checkpoint(chain[:4])
    cp2 = build_checkpoint(chain[4:], cp1)
    assert (cp1.checkpoint_id, cp2.checkpoint_id) == (1, 2)
    assert cp1.previous_checkpoint_hash == GENESIS_HASH
    assert cp2.previous_checkpoint_hash == cp1.digest()
    assert cp2.system_id == "sys-a" and cp2.leaf_count == 6
    hashes = {e.sequence_number: e.current_hash for e in chain}
    assert verify_checkpoints([cp1, cp2], hashes) == []


def test_checkpoint_errors():
    chain = sealed_chain(6)
    cp1 = build_checkpoint(chain[:3])
    with pytest.raises(BatchGapError):
        build_checkpoint(chain[4:], cp1)
    with pytest.raises(BatchGapError):
        build_checkpoint([chain[0], chain[2]])
    with pytest.raises(BatchGapError):
        build_checkpoint([])
    with pytest.raises(SealPreconditionError):
        build_checkpoint([minimal_draft()])


def test_checkpoint_findings():
    chain = sealed_chain(6)
    cp1 = build_checkpoint(chain[:3])
    cp2 = build_checkpoint(chain[3:], cp1)
    hashes = {e.sequence_number: e.current_hash for e in chain}
    hashes[5] = leaves(1)[0]
    assert [f.kind for f in verify_checkpoints([cp1, cp2], hashes)] == ["checkpoint_root_mismatch"]
    del hashes[5]
    assert [f.kind for f in verify_checkpoints([cp1, cp2], hashes)] == ["checkpoint_range"]
    hashes = {e.sequence_number: e.current_hash for e in chain}
    assert [f.kind for f in verify_checkpoints([cp2], hashes)] == ["checkpoint_link_mismatch"]


def test_checkpoint_before_retention_cut_is_not_recomputed():
    chain = sealed_chain(6)
    cp1 = checkpoint_from_leaves("sys-a", 1, [e.current_hash for e in chain[:4]])
    cp2 = checkpoint_from_leaves("sys-a", 5, [e.current_hash for e in chain[4:]], cp1)
    kept = {e.sequence_number: e.current_hash for e in chain[2:]}
    assert verify_checkpoints([cp1, cp2], kept, first_available=3) == []
    assert verify_checkpoints([cp1, cp2], kept)[0].kind == "checkpoint_range"
