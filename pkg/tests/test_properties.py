from __future__ import annotations

import hashlib
import json
import math
import random

import rfc8785
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from des_ledger.bench_harness import random_full_draft
from des_ledger.canonical_crypto import canonicalize
from des_ledger.chain_integrity import inclusion_proof, merkle_root, verify_chain, verify_inclusion
from des_ledger.enrichment import create_enrichment
from des_ledger.errors import DesError
from des_ledger.event_model import parse_event, serialize_event
from des_ledger.tiering import TierPolicy, project_to_tier, select_tier
from des_ledger.validator import validate

from conftest import minimal_draft, sealed_chain

SAFE_INT = 2**53 - 1
json_scalars = (
    st.none()
    | st.booleans()
    | st.integers(min_value=-SAFE_INT, max_value=SAFE_INT)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text()
)
json_values = st.recursive(
    json_scalars,
    lambda children: st.lists(children, max_size=5) | st.dictionaries(st.text(max_size=8), children, max_size=5),
    max_leaves=25,
)

CHAIN = sealed_chain(20)


@given(json_values)
def test_canonical_matches_reference(value):
    assert canonicalize(value) == rfc8785.dumps(value)


@given(json_values)
def test_canonical_is_a_fixed_point(value):
    once = canonicalize(value)
    assert canonicalize(json.loads(once)) == once


@given(st.dictionaries(st.text(max_size=6), st.integers(min_value=-SAFE_INT, max_value=SAFE_INT), max_size=8), st.randoms())
def test_key_order_irrelevant(doc, rnd):
    items = list(doc.items())
    rnd.shuffle(items)
    assert canonicalize(dict(items)) == canonicalize(doc)


@given(st.integers(min_value=1, max_value=300), st.data())
def test_merkle_proofs(n, data):
    leaves = [hashlib.sha256(i.to_bytes(4, "big")).hexdigest() for i in range(n)]
    root = merkle_root(leaves)
    i = data.draw(st.integers(min_value=0, max_value=n - 1))
    proof = inclusion_proof(leaves, i)
    assert len(proof.siblings) == math.ceil(math.log2(n))
    assert verify_inclusion(proof, root)
    altered = list(leaves)
    altered[i] = hashlib.sha256(b"other").hexdigest()
    assert merkle_root(altered) != root
    assert not verify_inclusion(inclusion_proof(altered, i), root)


@given(st.integers(min_value=0, max_value=19), st.data())
def test_any_single_byte_change_detected(index, data):
    raw = serialize_event(CHAIN[index])
    pos = data.draw(st.integers(min_value=0, max_value=len(raw) - 1))
    new = data.draw(st.integers(min_value=0, max_value=255).filter(lambda b: b != raw[pos]))
    mutated = raw[:pos] + bytes([new]) + raw[pos + 1:]
    try:
        event = parse_event(mutated)
    except DesError:
        return  # unparseable bytes are a parse_error finding in the store
    if serialize_event(event) != mutated:
        return  # non_canonical finding
    events = list(CHAIN)
    events[index] = event
    assert not verify_chain(events).clean


@settings(max_examples=60, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(min_value=0, max_value=2**32))
def test_projection_validity_and_monotonicity(seed):
    draft = random_full_draft(random.Random(seed))
    sizes = []
    for tier in ("full", "sampled", "lightweight"):
        projected = project_to_tier(draft, tier)
        assert validate(projected, tier=tier, draft=True).valid
        sizes.append(len(canonicalize(projected)))
    assert sizes[0] >= sizes[1] >= sizes[2]


@given(st.uuids(version=4), st.integers(min_value=0, max_value=1000), st.floats(min_value=0, max_value=1))
def test_sampling_deterministic(decision_id, seed, rate):
    draft = minimal_draft(0).replace("decision_context.decision_id", str(decision_id))
    policy = TierPolicy(tier2_sample_rate=rate, seed=seed)
    assert select_tier(draft, policy) == select_tier(draft, TierPolicy(tier2_sample_rate=rate, seed=seed))


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(min_value=0, max_value=19), json_values.filter(lambda v: v is not None)), max_size=10))
def test_enrichment_never_changes_chain(ops):
    before = [serialize_event(e) for e in CHAIN]
    for index, value in ops:
        payload = {"v": value} if not _has_null(value) else {"v": "x"}
        record = create_enrichment(CHAIN[index], "ground_truth", payload, "2026-04-01T00:00:00.000Z")
        assert record.binds_to(CHAIN[index])
    assert [serialize_event(e) for e in CHAIN] == before
    assert verify_chain(CHAIN).clean


def _has_null(value):
    if value is None:
        return True
    if isinstance(value, dict):
        return any(_has_null(v) for v in value.values())
    if isinstance(value, list):
        return any(_has_null(v) for v in value)
    return False
