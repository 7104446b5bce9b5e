from __future__ import annotations

import json
import uuid
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.asymmetric import ed25519

from des_ledger.canonical_crypto import Signer
from des_ledger.chain_integrity import ChainStreamState, seal_event
from des_ledger.event_model import DecisionEvent, new_minimal_event
from des_ledger.event_store import EventStore

FIXTURES = Path(__file__).parent / "fixtures"
VALIDATION_DIR = FIXTURES / "validation"


def load_fixture(name: str) -> DecisionEvent:
    return DecisionEvent(json.loads((VALIDATION_DIR / f"{name}.json").read_text()))


def minimal_draft(i: int = 0, *, system_id: str | None = "sys-a", **kw) -> DecisionEvent:
    """A valid lightweight draft; ``i`` picks a deterministic decision_id and timestamp."""
    return new_minimal_event(
        uuid.UUID(int=i + 1, version=4),
        kw.pop("decision_type", "risk_scoring"),
        kw.pop("logic_type", "ml_inference"),
        kw.pop("output", {"score": round(0.5 + i / 10_000, 4)}),
        kw.pop("override_occurred", False),
        kw.pop("event_timestamp", f"2026-03-01T12:{(i // 1000) % 60:02d}:{(i // 10) % 60:02d}.{i % 1000:03d}Z"),
        system_id=system_id,
        **kw,
    )


def full_draft(**overrides) -> DecisionEvent:
    """A hand-written full-tier ml_inference draft with all six groups."""
    doc = {
        "schema_version": "0.3.0",
        "decision_context": {
            "decision_id": "0b9e3c2d-7a41-4e6f-9d58-2c1b0a9f8e7d",
            "decision_type": "credit_approval",
            "inputs": [
                {"input_id": "income", "input_type": "feature", "input_value": 52000, "input_source": "crm"},
                {"input_id": "history", "input_type": "external_data", "input_value": "x" * 400},
            ],
            "environment": {"system_id": "sys-a", "system_version": "2.1.0", "deployment_id": "eu-west"},
        },
        "decision_logic": {
            "logic_type": "ml_inference",
            "model_inference": {
                "model_id": "credit-gbm",
                "model_version": "4.2.0",
                "feature_vector_hash": "ab" * 32,
                "prediction": 0.91,
                "confidence": 0.87,
            },
            "output": "approve",
        },
        "decision_boundary": {
            "upstream_decisions": [],
            "downstream_consumers": [],
        },
        "decision_quality_indicators": {"decision_risk_level": "medium", "threshold_alerts": []},
        "human_override_record": {"override_occurred": False},
        "temporal_metadata": {"event_timestamp": "2026-03-01T12:00:00.000Z", "evidence_tier": "full"},
    }
    event = DecisionEvent(doc)
    for path, value in overrides.items():
        event = event.replace(path.replace("__", "."), value)
    return event


def sealed_chain(n: int, *, system_id: str = "sys-a", signer: Signer | None = None, start: int = 0):
    state = ChainStreamState(system_id)
    out = []
    for i in range(start, start + n):
        event = seal_event(state, minimal_draft(i, system_id=system_id), signer)
        state = state.advance(event)
        out.append(event)
    return out


@pytest.fixture
def signer() -> Signer:
    key = ed25519.Ed25519PrivateKey.from_private_bytes(bytes(range(32)))
    return Signer(key, "signer-1", "urn:cert:test-1")


@pytest.fixture
def store(tmp_path):
    s = EventStore(tmp_path / "store", fsync=False)
    yield s
    s.close()


def build_mixed_store(root: Path, signer: Signer) -> EventStore:
    """Three streams: Tier-1-only with P6M retention, mixed tiers, signed Tier 1."""
    from des_ledger.ledger import Ledger
    from des_ledger.tiering import project_to_tier

    store = EventStore(root, fsync=False)
    plain = Ledger(store)
    for i in range(6):
        draft = minimal_draft(i, system_id="tier1-only")
        plain.append(draft.replace("temporal_metadata.retention_policy", {"minimum_retention": "P6M"}))
    for i, tier in enumerate(["lightweight", "sampled", "full", "sampled", "lightweight"]):
        draft = full_draft(
            decision_context__decision_id=str(uuid.UUID(int=1000 + i, version=4)),
            decision_context__environment={"system_id": "mixed"},
        )
        plain.append(project_to_tier(draft, tier), "mixed")
    signed = Ledger(store, signer=signer)
    for i in range(4):
        signed.append(minimal_draft(2000 + i, system_id="signed"))
    return store


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (title, ok, detail)
    print(f"AC{number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"AC{number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
