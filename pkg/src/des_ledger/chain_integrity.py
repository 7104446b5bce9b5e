"""Per-stream hash chains and Merkle checkpoints.

Each ``system_id`` owns one linear chain: event *n* stores the ``current_hash``
of event *n-1* as its ``previous_hash`` (64 zeros for the first event). Every
contiguous batch of sealed events can be committed to a Merkle checkpoint,
and checkpoints are themselves chained by the hash of their canonical form.

Merkle layout: leaves are the raw 32-byte ``current_hash`` values in sequence
order, an internal node is ``sha256(left || right)``, and a level with an odd
number of nodes is padded with ``PAD_NODE`` (``sha256(b"")``). Padding with a
constant rather than duplicating the last node means no two distinct leaf
sequences of the same length share a root, and every proof in a tree of
``n > 1`` leaves has exactly ``ceil(log2 n)`` siblings.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

from des_ledger.canonical_crypto import (
    DEFAULT_HASH_ALGORITHM,
    Signer,
    canonicalize,
    compute_event_hash,
    sign_event,
)
from des_ledger.errors import (
    AlreadySealed,
    BatchGapError,
    DesError,
    RejectedInvalid,
    SealPreconditionError,
    StreamMismatch,
)
from des_ledger.event_model import HEX64, DecisionEvent
from des_ledger.timefmt import parse_timestamp
from des_ledger.validator import validate

GENESIS_HASH = "0" * 64
CHECKPOINT_INTERVAL = 1024
PAD_NODE = hashlib.sha256(b"").digest()


@dataclass(frozen=True)
class ChainStreamState:
    system_id: str
    last_sequence: int = 0
    last_hash: str = GENESIS_HASH

    def advance(self, sealed: DecisionEvent) -> ChainStreamState:
        return ChainStreamState(self.system_id, sealed.sequence_number, sealed.current_hash)


def seal_event(
    state: ChainStreamState,
    draft: DecisionEvent,
    signer: Signer | None = None,
    *,
    algorithm: str | None = None,
) -> DecisionEvent:
    """Assign sequence and link, optionally sign, then compute ``current_hash``."""
    if draft.is_sealed:
        raise AlreadySealed(f"draft {draft.decision_id} already carries current_hash")
    if draft.system_id is not None and draft.system_id != state.system_id:
        raise StreamMismatch(f"draft belongs to stream {draft.system_id!r}, not {state.system_id!r}")
    doc = draft.to_dict()
    tm = doc.setdefault("temporal_metadata", {})
    tm["sequence_number"] = state.last_sequence + 1
    chain = tm.get("hash_chain") if isinstance(tm.get("hash_chain"), dict) else {}
    tm["hash_chain"] = {
        "previous_hash": state.last_hash,
        "algorithm": algorithm or chain.get("algorithm", DEFAULT_HASH_ALGORITHM),
    }
    event = DecisionEvent(doc)
    if signer is not None:
        signature = sign_event(event, signer.key, signer.signer_id, signer.certificate_ref)
        event = event.replace("temporal_metadata.digital_signature", signature)
    digest = compute_event_hash(event)
    return event.replace("temporal_metadata.hash_chain.current_hash", digest.hex)


def seal_and_append(
    state: ChainStreamState,
    draft: DecisionEvent,
    signer: Signer | None = None,
) -> tuple[DecisionEvent, ChainStreamState]:
    """Validate ``draft`` at its declared tier, seal it onto ``state``.

    Raises ``RejectedInvalid`` (state untouched) when validation fails. The
    caller owns persistence and must serialise appends per stream.
    """
    report = validate(draft, draft=True)
    if not report.valid:
        raise RejectedInvalid(report)
    sealed = seal_event(state, draft, signer)
    return sealed, state.advance(sealed)


# -- verification ------------------------------------------------------------------

FindingKind = Literal[
    "hash_mismatch",
    "link_mismatch",
    "sequence_gap",
    "sequence_duplicate",
    "sequence_regression",
    "unsealed",
    "unhashable",
    "timestamp_regression",
    "parse_error",
    "non_canonical",
    "stream_mismatch",
    "checkpoint_root_mismatch",
    "checkpoint_link_mismatch",
    "checkpoint_range",
]


@dataclass(frozen=True)
class ChainFinding:
    kind: str
    index: int
    sequence_number: int | None
    message: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class ChainVerificationReport:
    system_id: str | None
    events_checked: int = 0
    findings: list[ChainFinding] = field(default_factory=list)
    warnings: list[ChainFinding] = field(default_factory=list)
    head: ChainStreamState | None = None

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict[str, Any]:
        return {
            "system_id": self.system_id,
            "clean": self.clean,
            "events_checked": self.events_checked,
            "findings": [f.to_dict() for f in self.findings],
            "warnings": [w.to_dict() for w in self.warnings],
            "head": asdict(self.head) if self.head else None,
        }


def verify_chain(
    events: Iterable[DecisionEvent],
    *,
    anchor: ChainStreamState | None = None,
    system_id: str | None = None,
    report: ChainVerificationReport | None = None,
) -> ChainVerificationReport:
    """Check hashes, links and sequence continuity of one stream.

    ``anchor`` is the state just before the first event (genesis by default),
    which lets a verifier start mid-stream from a trusted head.
    """
    anchor = anchor or ChainStreamState(system_id or "")
    report = report or ChainVerificationReport(system_id or anchor.system_id or None)
    prev_seq, prev_hash = anchor.last_sequence, anchor.last_hash
    prev_ts = None
    for index, event in enumerate(events):
        report.events_checked += 1
        seq = event.sequence_number

        def finding(kind: str, message: str) -> None:
            report.findings.append(ChainFinding(kind, index, seq, message))

        if system_id and event.system_id is not None and event.system_id != system_id:
            finding("stream_mismatch", f"event names system {event.system_id!r}")
        stored = event.current_hash
        if stored is None:
            finding("unsealed", "current_hash is absent")
        else:
            try:
                recomputed = compute_event_hash(event).hex
            except (DesError, ValueError, TypeError) as exc:
                finding("unhashable", str(exc))
            else:
                if recomputed != stored:
                    finding("hash_mismatch", f"stored {stored} != recomputed {recomputed}")
        if event.previous_hash != prev_hash:
            finding("link_mismatch", f"previous_hash {event.previous_hash} != predecessor hash {prev_hash}")
        if not isinstance(seq, int) or isinstance(seq, bool):
            finding("sequence_gap", f"sequence_number {seq!r} is not an integer")
        elif seq == prev_seq:
            finding("sequence_duplicate", f"sequence {seq} repeats")
        elif seq < prev_seq:
            finding("sequence_regression", f"sequence {seq} after {prev_seq}")
        elif seq != prev_seq + 1:
            finding("sequence_gap", f"expected sequence {prev_seq + 1}, found {seq}")
        try:
            ts = parse_timestamp(event.event_timestamp)
        except (ValueError, TypeError):
            ts = None
        if ts is not None and prev_ts is not None and ts < prev_ts:
            report.warnings.append(
                ChainFinding("timestamp_regression", index, seq, "event_timestamp earlier than predecessor")
            )
        prev_ts = ts or prev_ts
        if isinstance(seq, int) and not isinstance(seq, bool):
            prev_seq = seq
        prev_hash = stored if isinstance(stored, str) else prev_hash
    report.head = ChainStreamState(report.system_id or "", prev_seq, prev_hash)
    return report


# -- Merkle --------------------------------------------------------------------


def _node(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(left + right).digest()


def _leaf_bytes(leaves: Sequence[str]) -> list[bytes]:
    out = []
    for leaf in leaves:
        if not isinstance(leaf, str) or HEX64.match(leaf) is None:
            raise ValueError(f"leaf {leaf!r} is not a 64-char lowercase hex digest")
        out.append(bytes.fromhex(leaf))
    return out


def _levels(leaves: list[bytes]) -> list[list[bytes]]:
    levels = [leaves]
    while len(levels[-1]) > 1:
        level = levels[-1]
        if len(level) % 2:
            level = level + [PAD_NODE]
            levels[-1] = level
        levels.append([_node(level[i], level[i + 1]) for i in range(0, len(level), 2)])
    return levels


def merkle_root(leaves: Sequence[str]) -> str:
    if not leaves:
        raise ValueError("cannot build a Merkle root over zero leaves")
    return _levels(_leaf_bytes(leaves))[-1][0].hex()


@dataclass(frozen=True)
class ProofStep:
    side: Literal["left", "right"]
    hash: str


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    leaf_hash: str
    siblings: tuple[ProofStep, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "leaf_index": self.leaf_index,
            "leaf_hash": self.leaf_hash,
            "siblings": [{"side": s.side, "hash": s.hash} for s in self.siblings],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> InclusionProof:
        return cls(
            data["leaf_index"],
            data["leaf_hash"],
            tuple(ProofStep(s["side"], s["hash"]) for s in data["siblings"]),
        )


def inclusion_proof(leaves: Sequence[str], leaf_index: int) -> InclusionProof:
    """Proof that ``leaves[leaf_index]`` is committed by ``merkle_root(leaves)``."""
    if not 0 <= leaf_index < len(leaves):
        raise IndexError(f"leaf index {leaf_index} outside 0..{len(leaves) - 1}")
    levels = _levels(_leaf_bytes(leaves))
    steps = []
    pos = leaf_index
    for level in levels[:-1]:
        if pos % 2:
            steps.append(ProofStep("left", level[pos - 1].hex()))
        else:
            steps.append(ProofStep("right", level[pos + 1].hex()))
        pos //= 2
    return InclusionProof(leaf_index, leaves[leaf_index], tuple(steps))


def verify_inclusion(proof: InclusionProof, merkle_root: str) -> bool:
    try:
        node = bytes.fromhex(proof.leaf_hash)
        for step in proof.siblings:
            sibling = bytes.fromhex(step.hash)
            if step.side == "left":
                node = _node(sibling, node)
            elif step.side == "right":
                node = _node(node, sibling)
            else:
                return False
    except (ValueError, TypeError):
        return False
    return node.hex() == merkle_root


# -- checkpoints -----------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    checkpoint_id: int
    system_id: str
    start_sequence: int
    end_sequence: int
    merkle_root: str
    previous_checkpoint_hash: str
    algorithm: str = DEFAULT_HASH_ALGORITHM

    @property
    def leaf_count(self) -> int:
        return self.end_sequence - self.start_sequence + 1

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Checkpoint:
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})

    def digest(self) -> str:
        return hashlib.sha256(canonicalize(self.to_dict())).hexdigest()


def checkpoint_from_leaves(
    system_id: str,
    start_sequence: int,
    leaves: Sequence[str],
    previous: Checkpoint | None = None,
) -> Checkpoint:
    """Commit ``leaves`` (current_hash values from ``start_sequence`` on)."""
    if not leaves:
        raise BatchGapError("checkpoint batch is empty")
    if previous is not None and start_sequence != previous.end_sequence + 1:
        raise BatchGapError(f"batch starts at {start_sequence}, previous checkpoint ends at {previous.end_sequence}")
    return Checkpoint(
        checkpoint_id=previous.checkpoint_id + 1 if previous else 1,
        system_id=system_id,
        start_sequence=start_sequence,
        end_sequence=start_sequence + len(leaves) - 1,
        merkle_root=merkle_root(leaves),
        previous_checkpoint_hash=previous.digest() if previous else GENESIS_HASH,
    )


def build_checkpoint(
    batch: Sequence[DecisionEvent],
    previous: Checkpoint | None = None,
    *,
    system_id: str | None = None,
) -> Checkpoint:
    if not batch:
        raise BatchGapError("checkpoint batch is empty")
    for event in batch:
        if not event.is_sealed:
            raise SealPreconditionError(f"event {event.decision_id} is not sealed")
    seqs = [e.sequence_number for e in batch]
    for a, b in zip(seqs, seqs[1:]):
        if b != a + 1:
            raise BatchGapError(f"batch is not contiguous between sequence {a} and {b}")
    stream = system_id or (previous.system_id if previous else None) or batch[0].system_id or ""
    return checkpoint_from_leaves(stream, seqs[0], [e.current_hash for e in batch], previous)


def verify_checkpoints(
    checkpoints: Sequence[Checkpoint],
    hashes_by_sequence: Mapping[int, str],
    *,
    first_available: int = 1,
) -> list[ChainFinding]:
    """Recompute every checkpoint root and the checkpoint-to-checkpoint links.

    Roots of checkpoints that start before ``first_available`` (some of their
    events were removed by retention) are not recomputed; their links still are.
    """
    findings = []
    prev: Checkpoint | None = None
    for index, cp in enumerate(checkpoints):
        expected_link = prev.digest() if prev else GENESIS_HASH
        if cp.previous_checkpoint_hash != expected_link:
            findings.append(
                ChainFinding("checkpoint_link_mismatch", index, cp.end_sequence, f"checkpoint {cp.checkpoint_id} link broken")
            )
        prev = cp
        if cp.start_sequence < first_available:
            continue
        leaves = [hashes_by_sequence.get(s) for s in range(cp.start_sequence, cp.end_sequence + 1)]
        if any(leaf is None for leaf in leaves) or cp.end_sequence < cp.start_sequence:
            findings.append(
                ChainFinding("checkpoint_range", index, cp.end_sequence, f"checkpoint {cp.checkpoint_id} covers missing events")
            )
        else:
            try:
                root = merkle_root(leaves)
            except ValueError as exc:
                root = str(exc)
            if root != cp.merkle_root:
                findings.append(
                    ChainFinding("checkpoint_root_mismatch", index, cp.end_sequence, f"checkpoint {cp.checkpoint_id} root differs")
                )
    return findings
