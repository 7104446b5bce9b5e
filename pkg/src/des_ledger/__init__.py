"""Tamper-evident decision-event ledger toolkit.

Construct, validate, seal, chain, checkpoint, enrich, store and serve
Decision Event Schema (DES) records.
"""

from des_ledger.canonical_crypto import (
    SealedDigest,
    Signer,
    canonicalize,
    compute_event_hash,
    hash_sensitive_value,
    sign_event,
    verify_signature,
)
from des_ledger.chain_integrity import (
    GENESIS_HASH,
    ChainStreamState,
    Checkpoint,
    InclusionProof,
    build_checkpoint,
    inclusion_proof,
    seal_and_append,
    verify_chain,
    verify_inclusion,
)
from des_ledger.enrichment import EnrichmentRecord, create_enrichment, resolve_view
from des_ledger.event_model import DecisionEvent, new_minimal_event, parse_event, serialize_event
from des_ledger.event_store import EventStore
from des_ledger.tiering import TierPolicy, estimate_payload_size, project_to_tier, select_tier
from des_ledger.validator import ValidationReport, rule_catalog, validate, validate_batch

__version__ = "0.1.0"

__all__ = [
    "GENESIS_HASH",
    "ChainStreamState",
    "Checkpoint",
    "DecisionEvent",
    "EnrichmentRecord",
    "EventStore",
    "InclusionProof",
    "SealedDigest",
    "Signer",
    "TierPolicy",
    "ValidationReport",
    "build_checkpoint",
    "canonicalize",
    "compute_event_hash",
    "create_enrichment",
    "estimate_payload_size",
    "hash_sensitive_value",
    "inclusion_proof",
    "new_minimal_event",
    "parse_event",
    "project_to_tier",
    "resolve_view",
    "rule_catalog",
    "seal_and_append",
    "select_tier",
    "serialize_event",
    "sign_event",
    "validate",
    "validate_batch",
    "verify_chain",
    "verify_inclusion",
    "verify_signature",
]
