"""Write path shared by the CLI and the ingest service.

``Ledger`` ties a store to the chain: validate, seal onto the stream head,
append durably, and commit a Merkle checkpoint every ``checkpoint_interval``
events. Appends are serialised per stream; different streams proceed in
parallel.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Mapping
from typing import Any

from des_ledger.canonical_crypto import Signer, hash_sensitive_value
from des_ledger.chain_integrity import CHECKPOINT_INTERVAL, Checkpoint, checkpoint_from_leaves, seal_and_append
from des_ledger.enrichment import EnrichmentRecord, create_enrichment
from des_ledger.errors import DuplicateDecision, StreamMismatch
from des_ledger.event_model import DecisionEvent
from des_ledger.event_store import EventStore
from des_ledger.tiering import TierPolicy, apply_policy

log = logging.getLogger(__name__)

SENSITIVE_MARKER = "input_value_sensitive"


def hash_marked_inputs(draft: DecisionEvent, deployment_key: bytes | str | None) -> DecisionEvent:
    """Replace ``input_value`` of inputs flagged ``input_value_sensitive`` by a keyed digest.

    The marker itself is not part of the schema and is dropped. Without a
    deployment key the digest falls back to plain SHA-256.
    """
    inputs = draft.get_path("decision_context.inputs")
    if not inputs or not any(isinstance(r, Mapping) and SENSITIVE_MARKER in r for r in inputs):
        return draft
    out = []
    for record in inputs:
        rec = dict(record)
        if rec.pop(SENSITIVE_MARKER, False) is True and "input_value" in rec:
            rec["input_value"] = hash_sensitive_value(
                rec["input_value"], deployment_key or b"", keyed=bool(deployment_key)
            )
        out.append(rec)
    return draft.replace("decision_context.inputs", out)


class Ledger:
    def __init__(
        self,
        store: EventStore,
        *,
        signer: Signer | None = None,
        tier_policy: TierPolicy | None = None,
        deployment_key: bytes | str | None = None,
        checkpoint_interval: int = CHECKPOINT_INTERVAL,
    ) -> None:
        if checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be positive")
        self.store = store
        self.signer = signer
        self.tier_policy = tier_policy
        self.deployment_key = deployment_key
        self.checkpoint_interval = checkpoint_interval
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        # current_hash values appended since the last checkpoint, per stream
        self._pending: dict[str, tuple[int, list[str]]] = {}

    def stream_lock(self, system_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(system_id, threading.Lock())

    def prepare(self, draft: DecisionEvent) -> DecisionEvent:
        """Apply privacy hashing and, for drafts without a declared tier, the tier policy."""
        draft = hash_marked_inputs(draft, self.deployment_key)
        if self.tier_policy is not None and draft.evidence_tier is None:
            draft = apply_policy(draft, self.tier_policy)
        return draft

    def append(self, draft: DecisionEvent, system_id: str | None = None) -> DecisionEvent:
        """Validate, seal and durably append one draft; return the sealed event."""
        system_id = system_id or draft.system_id
        if not system_id:
            raise StreamMismatch("draft carries no system_id and none was given")
        if draft.decision_id is not None and self.store.locate(str(draft.decision_id)) is not None:
            raise DuplicateDecision(f"decision {draft.decision_id} is already stored")
        with self.stream_lock(system_id):
            state = self.store.head(system_id)
            sealed, _ = seal_and_append(state, draft, self.signer)
            self.store.append(sealed, system_id)
            self._note_appended(system_id, sealed)
        return sealed

    def _pending_for(self, system_id: str) -> tuple[int, list[str]]:
        pending = self._pending.get(system_id)
        if pending is None:
            cps = self.store.checkpoints(system_id)
            start = cps[-1].end_sequence + 1 if cps else self.store.anchor(system_id).last_sequence + 1
            leaves = [e.current_hash for e in self.store.scan(system_id, start)]
            pending = (start, leaves)
            self._pending[system_id] = pending
        return pending

    def _note_appended(self, system_id: str, sealed: DecisionEvent) -> None:
        start, leaves = self._pending_for(system_id)
        if sealed.sequence_number not in range(start, start + len(leaves) + 1):
            return  # already accounted for by the rescan
        if sealed.sequence_number == start + len(leaves):
            leaves.append(sealed.current_hash)
        if len(leaves) >= self.checkpoint_interval:
            self._commit(system_id)

    def _commit(self, system_id: str) -> Checkpoint | None:
        start, leaves = self._pending_for(system_id)
        if not leaves:
            return None
        cps = self.store.checkpoints(system_id)
        checkpoint = checkpoint_from_leaves(system_id, start, leaves, cps[-1] if cps else None)
        self.store.append_checkpoint(checkpoint)
        self._pending[system_id] = (checkpoint.end_sequence + 1, [])
        log.debug("checkpoint %d over %s:%d-%d", checkpoint.checkpoint_id, system_id, start, checkpoint.end_sequence)
        return checkpoint

    def checkpoint(self, system_id: str) -> Checkpoint | None:
        """Commit any events not yet covered by a checkpoint (a short batch)."""
        with self.stream_lock(system_id):
            return self._commit(system_id)

    def enrich(
        self,
        decision_id: str,
        kind: str,
        payload: Mapping[str, Any],
        created_at: str | None = None,
    ) -> EnrichmentRecord:
        target = self.store.lookup(decision_id)
        if target is None:
            raise KeyError(decision_id)
        record = create_enrichment(target, kind, payload, created_at, signer=self.signer)
        self.store.append_enrichment(record)
        return record
