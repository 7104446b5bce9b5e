"""Post-hoc enrichment of sealed events.

Late evidence (ground truth, quality updates) never touches the sealed event.
It is stored as a separate record whose ``link_hash`` binds it to one exact
sealed form of its target.
"""

from __future__ import annotations

import base64
import hashlib
import uuid
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec

from des_ledger.canonical_crypto import Signer, key_algorithm, canonicalize
from des_ledger.errors import FormatError, StaleEnrichment, TargetUnsealed
from des_ledger.event_model import DecisionEvent, freeze, is_namespaced, is_uuid, thaw
from des_ledger.timefmt import is_timestamp, utc_now

BUILTIN_KINDS = frozenset({"ground_truth", "quality_update"})


def compute_link_hash(target_hash: str, payload: Mapping[str, Any]) -> str:
    return hashlib.sha256(target_hash.encode("ascii") + canonicalize(payload)).hexdigest()


@dataclass(frozen=True)
class EnrichmentRecord:
    enrichment_id: str
    decision_id: str
    kind: str
    payload: Mapping[str, Any]
    created_at: str
    link_hash: str
    digital_signature: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if not is_uuid(self.enrichment_id):
            raise FormatError("enrichment_id", "must be a UUID")
        if not is_uuid(self.decision_id):
            raise FormatError("decision_id", "must be a UUID")
        if self.kind not in BUILTIN_KINDS and not is_namespaced(self.kind):
            raise FormatError("kind", f"{self.kind!r} is neither built-in nor namespaced")
        if not is_timestamp(self.created_at):
            raise FormatError("created_at", "must be RFC 3339 UTC with millisecond precision")
        if not isinstance(self.payload, Mapping):
            raise FormatError("payload", "must be an object")
        object.__setattr__(self, "payload", freeze(self.payload, "payload"))
        if self.digital_signature is not None:
            object.__setattr__(self, "digital_signature", MappingProxyType(dict(self.digital_signature)))

    def to_dict(self) -> dict[str, Any]:
        out = {
            "enrichment_id": self.enrichment_id,
            "decision_id": self.decision_id,
            "kind": self.kind,
            "payload": thaw(self.payload),
            "created_at": self.created_at,
            "link_hash": self.link_hash,
        }
        if self.digital_signature is not None:
            out["digital_signature"] = dict(self.digital_signature)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EnrichmentRecord:
        try:
            return cls(
                enrichment_id=data["enrichment_id"],
                decision_id=data["decision_id"],
                kind=data["kind"],
                payload=data["payload"],
                created_at=data["created_at"],
                link_hash=data["link_hash"],
                digital_signature=data.get("digital_signature"),
            )
        except KeyError as exc:
            raise FormatError(str(exc.args[0]), "required enrichment field is missing") from None

    def binds_to(self, target: DecisionEvent) -> bool:
        return (
            target.is_sealed
            and target.decision_id == self.decision_id
            and compute_link_hash(target.current_hash, self.payload) == self.link_hash
        )


def _signing_view(record: EnrichmentRecord) -> bytes:
    doc = record.to_dict()
    doc.get("digital_signature", {}).pop("signature_value", None)
    return canonicalize(doc)


def create_enrichment(
    target: DecisionEvent,
    kind: str,
    payload: Mapping[str, Any],
    created_at: str | None = None,
    *,
    enrichment_id: str | None = None,
    signer: Signer | None = None,
) -> EnrichmentRecord:
    if not target.is_sealed:
        raise TargetUnsealed(f"event {target.decision_id} has no current_hash")
    record = EnrichmentRecord(
        enrichment_id=enrichment_id or str(uuid.uuid4()),
        decision_id=target.decision_id,
        kind=kind,
        payload=payload,
        created_at=created_at or utc_now(),
        link_hash=compute_link_hash(target.current_hash, payload),
    )
    if signer is None:
        return record
    meta = {"signer_id": signer.signer_id, "algorithm": signer.algorithm, "certificate_ref": signer.certificate_ref}
    unsigned = EnrichmentRecord(**{**record.to_dict(), "digital_signature": meta})
    view = _signing_view(unsigned)
    raw = signer.key.sign(view) if signer.algorithm == "ed25519" else signer.key.sign(view, ec.ECDSA(hashes.SHA256()))
    return EnrichmentRecord(
        **{**record.to_dict(), "digital_signature": {**meta, "signature_value": base64.b64encode(raw).decode("ascii")}}
    )


def verify_enrichment_signature(record: EnrichmentRecord, public_key) -> bool:
    sig = record.digital_signature
    if not sig or "signature_value" not in sig:
        return False
    if key_algorithm(public_key) != sig.get("algorithm"):
        return False
    try:
        raw = base64.b64decode(sig["signature_value"], validate=True)
        if sig["algorithm"] == "ed25519":
            public_key.verify(raw, _signing_view(record))
        else:
            public_key.verify(raw, _signing_view(record), ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class EnrichedView:
    """Read-only pairing of a sealed event with its enrichments."""

    base: DecisionEvent
    enrichments: tuple[EnrichmentRecord, ...] = field(default_factory=tuple)

    def of_kind(self, kind: str) -> tuple[EnrichmentRecord, ...]:
        return tuple(e for e in self.enrichments if e.kind == kind)

    def to_dict(self) -> dict[str, Any]:
        return {"event": self.base.to_dict(), "enrichments": [e.to_dict() for e in self.enrichments]}


def resolve_view(target: DecisionEvent, enrichments: Iterable[EnrichmentRecord]) -> EnrichedView:
    records = list(enrichments)
    for record in records:
        if record.decision_id != target.decision_id:
            raise StaleEnrichment(f"enrichment {record.enrichment_id} targets {record.decision_id}")
        if not record.binds_to(target):
            raise StaleEnrichment(f"enrichment {record.enrichment_id} is bound to a different sealed form")
    records.sort(key=lambda r: (r.created_at, r.enrichment_id))
    return EnrichedView(target, tuple(records))
