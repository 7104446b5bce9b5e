"""Convert Open Policy Agent decision-log entries into policy-evaluation drafts.

Mapped fields: ``decision_id``, ``path`` (policy_id), ``result``
(evaluation_result and output), ``input`` (one input record per top-level
key), ``timestamp`` and the policy version from labels or bundle revisions.
Everything else is kept verbatim under ``opa:`` root keys.
"""

from __future__ import annotations

import hashlib
import re
import uuid
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from des_ledger.canonical_crypto import canonicalize, hash_sensitive_value
from des_ledger.errors import CanonicalizationError, ConversionError, ParseError
from des_ledger.event_model import (
    INPUT_TYPES,
    SCHEMA_VERSION,
    DecisionEvent,
    is_uuid,
    load_json,
    thaw,
    token_allowed,
)
from des_ledger.timefmt import normalize_rfc3339
from des_ledger.validator import validate

MAX_SAFE_INTEGER = 2**53 - 1
MAPPED_FIELDS = frozenset({"decision_id", "path", "input", "result", "timestamp"})
OPA_NAMESPACE = uuid.uuid5(uuid.NAMESPACE_URL, "https://www.openpolicyagent.org/decision-log")


@dataclass(frozen=True)
class ConversionConfig:
    decision_type: str = "policy_enforcement"
    evidence_tier: str = "sampled"
    decision_risk_level: str = "low"
    system_id: str = "opa"
    input_type: str = "external_data"
    sensitive_fields: frozenset[str] = field(default_factory=frozenset)
    deployment_key: bytes | str | None = None
    retention: str | None = None

    def __post_init__(self) -> None:
        if not token_allowed(self.input_type, INPUT_TYPES):
            raise ValueError(f"input_type {self.input_type!r} is not an input type")
        object.__setattr__(self, "sensitive_fields", frozenset(self.sensitive_fields))


def _contains_null(value: Any) -> bool:
    if value is None:
        return True
    if isinstance(value, Mapping):
        return any(_contains_null(v) for v in value.values())
    if isinstance(value, list):
        return any(_contains_null(v) for v in value)
    return False


def _wide_ints_as_text(value: Any) -> Any:
    # OPA emits nanosecond clocks; integers past 2**53 have no canonical JSON form
    if isinstance(value, int) and not isinstance(value, bool) and abs(value) > MAX_SAFE_INTEGER:
        return str(value)
    if isinstance(value, Mapping):
        return {k: _wide_ints_as_text(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_wide_ints_as_text(v) for v in value]
    return value


def _null_safe(value: Any) -> Any:
    # events forbid explicit nulls, so a value carrying one is kept as a digest
    value = _wide_ints_as_text(value)
    if _contains_null(value):
        return hashlib.sha256(canonicalize(value)).hexdigest()
    return value


def _extension_key(name: str) -> str:
    local = re.sub(r"[^a-z0-9_.-]", "_", name.lower())
    if not local or not local[0].isalpha():
        local = "f" + local
    return f"opa:{local}"


def _policy_version(entry: Mapping[str, Any]) -> str | None:
    labels = entry.get("labels")
    if isinstance(labels, Mapping) and isinstance(labels.get("policy_version"), str):
        return labels["policy_version"]
    bundles = entry.get("bundles")
    if isinstance(bundles, Mapping):
        revisions = [
            (name, b.get("revision"))
            for name, b in sorted(bundles.items())
            if isinstance(b, Mapping) and isinstance(b.get("revision"), str) and b.get("revision")
        ]
        if len(revisions) == 1:
            return revisions[0][1]
        if revisions:
            return ",".join(f"{name}@{rev}" for name, rev in revisions)
    return None


def _inputs(entry: Mapping[str, Any], config: ConversionConfig) -> list[dict[str, Any]]:
    if "input" not in entry or entry["input"] is None:
        return []
    raw = entry["input"]
    items = sorted(raw.items()) if isinstance(raw, Mapping) else [("input", raw)]
    records = []
    for key, value in items:
        if key in config.sensitive_fields:
            value = hash_sensitive_value(value, config.deployment_key or b"", keyed=bool(config.deployment_key))
        records.append(
            {
                "input_id": key,
                "input_type": config.input_type,
                "input_value": _null_safe(value),
                "input_source": "opa:input",
            }
        )
    return records


def convert_opa_decision(entry: Mapping[str, Any], config: ConversionConfig | None = None) -> DecisionEvent:
    """Build a policy-evaluation draft from one decision-log entry.

    Raises ``ConversionError`` when a mapped required field is missing or the
    resulting draft does not validate at the configured tier.
    """
    config = config or ConversionConfig()
    if not isinstance(entry, Mapping):
        raise ConversionError("decision-log entry must be a JSON object")
    for key in ("decision_id", "path", "timestamp"):
        if not isinstance(entry.get(key), str) or not entry[key]:
            raise ConversionError(f"entry lacks {key}")
    if "result" not in entry or entry["result"] is None:
        raise ConversionError(f"entry {entry['decision_id']} has no result; decision_logic.output would be absent")
    try:
        timestamp = normalize_rfc3339(entry["timestamp"])
    except ValueError as exc:
        raise ConversionError(str(exc)) from None

    opa_id = entry["decision_id"]
    decision_id = opa_id.lower() if is_uuid(opa_id) else str(uuid.uuid5(OPA_NAMESPACE, opa_id))
    result = _null_safe(entry["result"])

    policy: dict[str, Any] = {"policy_id": entry["path"], "policy_engine": "OPA", "evaluation_result": result}
    version = _policy_version(entry)
    if version:
        policy["policy_version"] = version
    environment: dict[str, Any] = {"system_id": config.system_id}
    labels = entry.get("labels") if isinstance(entry.get("labels"), Mapping) else {}
    if isinstance(labels.get("id"), str):
        environment["deployment_id"] = labels["id"]
    if isinstance(labels.get("version"), str):
        environment["system_version"] = labels["version"]

    context: dict[str, Any] = {
        "decision_id": decision_id,
        "decision_type": config.decision_type,
        "environment": environment,
    }
    inputs = _inputs(entry, config)
    if inputs:
        context["inputs"] = inputs
    temporal: dict[str, Any] = {"event_timestamp": timestamp, "evidence_tier": config.evidence_tier}
    if config.retention:
        temporal["retention_policy"] = {"minimum_retention": config.retention}
    doc: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "decision_context": context,
        "decision_logic": {"logic_type": "policy_evaluation", "policy_evaluation": policy, "output": result},
        "decision_quality_indicators": {"decision_risk_level": config.decision_risk_level},
        "human_override_record": {"override_occurred": False},
        "temporal_metadata": temporal,
    }
    if decision_id != opa_id:
        doc["opa:decision_id"] = opa_id
    for key, value in entry.items():
        if key not in MAPPED_FIELDS and value is not None:
            doc[_extension_key(key)] = _null_safe(value)

    draft = DecisionEvent(doc)
    try:
        canonicalize(draft)
    except CanonicalizationError as exc:
        raise ConversionError(f"entry {opa_id} cannot be canonicalized: {exc}") from None
    report = validate(draft, draft=True)
    if not report.valid:
        rules = ", ".join(sorted({v.rule_id for v in report.violations}))
        raise ConversionError(f"converted draft for {opa_id} is invalid ({rules})")
    return draft


def recover_opa_fields(event: DecisionEvent) -> dict[str, Any]:
    """Read the mapped OPA fields back out of a converted event."""
    return {
        "decision_id": event.get("opa:decision_id", event.decision_id),
        "path": event.get_path("decision_logic.policy_evaluation.policy_id"),
        "result": thaw(event.get_path("decision_logic.policy_evaluation.evaluation_result")),
    }


def iter_opa_log(source: str | bytes | Path) -> Iterator[Any]:
    """Yield entries from NDJSON or a JSON array, given a path or the raw text."""
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = source
    if text.lstrip().startswith("["):
        data = load_json(text)
        yield from data
        return
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield load_json(line)
        except ParseError as exc:
            raise ConversionError(f"line {lineno}: {exc}") from None


def convert_opa_log(
    entries: Iterable[Mapping[str, Any]], config: ConversionConfig | None = None
) -> list[DecisionEvent]:
    return [convert_opa_decision(e, config) for e in entries]
