"""Decision event record types and the JSON wire form.

A ``DecisionEvent`` is a deep-frozen view of one event document. Unknown keys
are kept verbatim because they take part in hashing; nothing is re-ordered
or normalised at parse time.
"""

from __future__ import annotations

import json
import re
import uuid
from collections.abc import Iterator, Mapping
from datetime import datetime
from types import MappingProxyType
from typing import Any, Literal, TypedDict

from des_ledger.errors import EnumViolation, FormatError, NullForbidden, ParseError
from des_ledger.timefmt import format_timestamp

SCHEMA_VERSION = "0.3.0"

EvidenceTier = Literal["lightweight", "sampled", "full"]

LOGIC_TYPES = frozenset({"rule_based", "ml_inference", "hybrid", "policy_evaluation", "human_decision"})
EVIDENCE_TIERS = frozenset({"full", "sampled", "lightweight"})
INPUT_TYPES = frozenset({"feature", "model_output", "policy", "external_data", "human_input"})
RULE_RESULTS = frozenset({"match", "no_match", "error"})
POLICY_ENGINES = frozenset({"OPA", "Cedar", "custom"})
COMBINATION_METHODS = frozenset({"voting", "cascading", "overriding", "weighted"})
COUPLING_TYPES = frozenset({"input", "constraint", "override", "context"})
FAILURE_MODES = frozenset({"fail_open", "fail_closed", "degrade", "retry"})
RISK_LEVELS = frozenset({"low", "medium", "high", "critical"})
OVERRIDE_TYPES = frozenset({"approval", "rejection", "modification", "escalation", "deferral"})

TOP_LEVEL_GROUPS = frozenset(
    {
        "schema_version",
        "decision_context",
        "decision_logic",
        "decision_boundary",
        "decision_quality_indicators",
        "human_override_record",
        "temporal_metadata",
    }
)

REQUIRED_PATHS: tuple[str, ...] = (
    "schema_version",
    "decision_context.decision_id",
    "decision_context.decision_type",
    "decision_logic.logic_type",
    "decision_logic.output",
    "human_override_record.override_occurred",
    "temporal_metadata.event_timestamp",
    "temporal_metadata.sequence_number",
    "temporal_metadata.hash_chain",
    "temporal_metadata.evidence_tier",
)
# Assigned by sealing, so a draft may lack them.
SEAL_ASSIGNED_PATHS = frozenset({"temporal_metadata.sequence_number", "temporal_metadata.hash_chain"})

OVERRIDE_TRIPLE = ("original_output", "overridden_output", "override_timestamp")

NAMESPACED = re.compile(r"^[a-z][a-z0-9_]*:[a-z][a-z0-9_.-]*$")
UUID_RE = re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$")
HEX64 = re.compile(r"^[0-9a-f]{64}$")
SEMVER = re.compile(r"^\d+\.\d+\.\d+(?:-[0-9A-Za-z.-]+)?(?:\+[0-9A-Za-z.-]+)?$")

U64_MAX = 2**64 - 1


# -- nested shapes (documentation and static typing only) -------------------


class InputRecord(TypedDict, total=False):
    input_id: str
    input_type: str
    input_value: Any
    input_source: str
    input_version: str


class Environment(TypedDict, total=False):
    system_id: str
    system_version: str
    configuration_hash: str
    deployment_id: str


class DecisionContext(TypedDict, total=False):
    decision_id: str
    decision_type: str
    trigger: str
    inputs: list[InputRecord]
    environment: Environment


class RulePathEntry(TypedDict):
    rule_id: str
    rule_version: str
    rule_result: str


class ModelInference(TypedDict, total=False):
    model_id: str
    model_version: str
    feature_vector_hash: str
    prediction: Any
    confidence: float


class PolicyEvaluation(TypedDict, total=False):
    policy_id: str
    policy_version: str
    policy_engine: str
    evaluation_result: Any


class DecisionLogic(TypedDict, total=False):
    logic_type: str
    rule_path: list[RulePathEntry]
    model_inference: ModelInference
    policy_evaluation: PolicyEvaluation
    combination_method: str
    output: Any
    output_alternatives: list[Any]


class BoundaryContract(TypedDict, total=False):
    protocol: str
    schema_version: str
    sla: dict[str, Any]
    data_contract: Any
    failure_mode: str


class UpstreamRef(TypedDict, total=False):
    decision_id: str
    system_id: str
    coupling_type: str
    boundary_contract: BoundaryContract


class DownstreamRef(TypedDict, total=False):
    system_id: str
    contract_version: str
    boundary_contract: BoundaryContract


class DecisionBoundary(TypedDict, total=False):
    upstream_decisions: list[UpstreamRef]
    downstream_consumers: list[DownstreamRef]


class QualityIndicators(TypedDict, total=False):
    confidence_score: float
    confidence_components: list[dict[str, Any]]
    data_quality: dict[str, Any]  # completeness, freshness (integer seconds), known_issues
    decision_risk_level: str
    threshold_alerts: list[dict[str, Any]]


class OverrideActor(TypedDict, total=False):
    actor_id: str
    actor_role: str
    authorization_level: str


class HumanOverrideRecord(TypedDict, total=False):
    override_occurred: bool
    override_type: str
    override_actor: OverrideActor
    original_output: Any
    overridden_output: Any
    override_rationale: Any
    override_timestamp: str
    time_to_override: int  # integer milliseconds


class HashChain(TypedDict, total=False):
    previous_hash: str
    current_hash: str
    algorithm: str


class DigitalSignature(TypedDict, total=False):
    signer_id: str
    signature_value: str
    algorithm: str
    certificate_ref: str


class RetentionPolicy(TypedDict, total=False):
    minimum_retention: str
    classification: str


class TemporalMetadata(TypedDict, total=False):
    event_timestamp: str
    processing_duration_ms: int
    sequence_number: int
    hash_chain: HashChain
    evidence_tier: EvidenceTier
    digital_signature: DigitalSignature
    retention_policy: RetentionPolicy


# -- token helpers -----------------------------------------------------------


def is_namespaced(token: object) -> bool:
    return isinstance(token, str) and NAMESPACED.match(token) is not None


def token_allowed(token: object, core: frozenset[str]) -> bool:
    """Core member, or a namespaced extension whose prefix is not a core member."""
    if not isinstance(token, str):
        return False
    if token in core:
        return True
    return is_namespaced(token) and token.split(":", 1)[0] not in core


def is_uuid(value: object) -> bool:
    return isinstance(value, str) and UUID_RE.match(value) is not None


# -- freezing ------------------------------------------------------------------


def freeze(value: Any, path: str) -> Any:
    if value is None:
        raise NullForbidden(path or "$")
    if isinstance(value, Mapping):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise FormatError(path or "$", f"non-string key {k!r}")
            out[k] = freeze(v, f"{path}.{k}" if path else k)
        return MappingProxyType(out)
    if isinstance(value, (list, tuple)):
        return tuple(freeze(v, f"{path}[{i}]") for i, v in enumerate(value))
    if isinstance(value, (str, int, float, bool)):
        return value
    raise FormatError(path or "$", f"unsupported value type {type(value).__name__}")


def thaw(value: Any) -> Any:
    """Deep-copy a frozen structure back into plain dicts and lists."""
    if isinstance(value, Mapping):
        return {k: thaw(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [thaw(v) for v in value]
    return value


_MISSING = object()


class DecisionEvent(Mapping[str, Any]):
    """Immutable decision event document.

    Behaves as a read-only mapping over the top-level field groups. Use
    :meth:`to_dict` for a mutable copy and :meth:`replace` / :meth:`remove`
    to derive new events.
    """

    __slots__ = ("_doc",)

    def __init__(self, document: Mapping[str, Any]) -> None:
        if not isinstance(document, Mapping):
            raise FormatError("$", "event document must be a JSON object")
        self._doc = freeze(document, "")

    @classmethod
    def _from_frozen(cls, frozen: Mapping[str, Any]) -> DecisionEvent:
        obj = cls.__new__(cls)
        obj._doc = frozen
        return obj

    def __getitem__(self, key: str) -> Any:
        return self._doc[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._doc)

    def __len__(self) -> int:
        return len(self._doc)

    def __repr__(self) -> str:
        return f"DecisionEvent(decision_id={self.decision_id!r}, seq={self.sequence_number!r})"

    def get_path(self, path: str, default: Any = None) -> Any:
        node: Any = self._doc
        for part in path.split("."):
            if not isinstance(node, Mapping) or part not in node:
                return default
            node = node[part]
        return node

    def has_path(self, path: str) -> bool:
        return self.get_path(path, _MISSING) is not _MISSING

    def to_dict(self) -> dict[str, Any]:
        return thaw(self._doc)

    def replace(self, path: str, value: Any) -> DecisionEvent:
        doc = self.to_dict()
        node = doc
        *parents, leaf = path.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
        return DecisionEvent(doc)

    def remove(self, *paths: str) -> DecisionEvent:
        doc = self.to_dict()
        for path in paths:
            node: Any = doc
            *parents, leaf = path.split(".")
            for part in parents:
                node = node.get(part) if isinstance(node, dict) else None
            if isinstance(node, dict):
                node.pop(leaf, None)
        return DecisionEvent(doc)

    # convenience accessors over the required paths
    @property
    def schema_version(self) -> str | None:
        return self._doc.get("schema_version")

    @property
    def decision_id(self) -> str | None:
        return self.get_path("decision_context.decision_id")

    @property
    def decision_type(self) -> str | None:
        return self.get_path("decision_context.decision_type")

    @property
    def logic_type(self) -> str | None:
        return self.get_path("decision_logic.logic_type")

    @property
    def output(self) -> Any:
        return self.get_path("decision_logic.output")

    @property
    def override_occurred(self) -> bool | None:
        return self.get_path("human_override_record.override_occurred")

    @property
    def event_timestamp(self) -> str | None:
        return self.get_path("temporal_metadata.event_timestamp")

    @property
    def sequence_number(self) -> int | None:
        return self.get_path("temporal_metadata.sequence_number")

    @property
    def evidence_tier(self) -> str | None:
        return self.get_path("temporal_metadata.evidence_tier")

    @property
    def system_id(self) -> str | None:
        return self.get_path("decision_context.environment.system_id")

    @property
    def previous_hash(self) -> str | None:
        return self.get_path("temporal_metadata.hash_chain.previous_hash")

    @property
    def current_hash(self) -> str | None:
        return self.get_path("temporal_metadata.hash_chain.current_hash")

    @property
    def is_sealed(self) -> bool:
        return self.current_hash is not None


# -- wire form -----------------------------------------------------------------


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise ParseError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name: str) -> Any:
    raise ParseError(f"non-finite number {name} is not JSON")


def load_json(wire: bytes | str) -> Any:
    """Strict JSON decode: UTF-8 only, no duplicate keys, no NaN/Infinity."""
    if isinstance(wire, (bytes, bytearray)):
        try:
            text = bytes(wire).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    else:
        text = wire
    try:
        return json.loads(text, object_pairs_hook=_reject_duplicates, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8", "surrogatepass"))
        raise ParseError(f"malformed JSON: {exc.msg}", offset) from None


def parse_event(wire: bytes | str) -> DecisionEvent:
    doc = load_json(wire)
    if not isinstance(doc, dict):
        raise ParseError("event document must be a JSON object", 0)
    event = DecisionEvent(doc)
    did = event.get_path("decision_context.decision_id", _MISSING)
    if did is not _MISSING and not is_uuid(did):
        raise FormatError("decision_context.decision_id", f"{did!r} is not a UUID")
    return event


def serialize_event(event: DecisionEvent) -> bytes:
    """Canonical UTF-8 bytes of the event; this is also the stored form."""
    from des_ledger.canonical_crypto import canonicalize

    return canonicalize(event)


def new_minimal_event(
    decision_id: str | uuid.UUID,
    decision_type: str,
    logic_type: str,
    output: Any,
    override_occurred: bool,
    event_timestamp: str | datetime,
    evidence_tier: str = "lightweight",
    *,
    schema_version: str = SCHEMA_VERSION,
    human_override: Mapping[str, Any] | None = None,
    system_id: str | None = None,
) -> DecisionEvent:
    """Build an unsealed draft holding the lightweight-tier minimum.

    ``sequence_number`` and ``hash_chain`` are left for sealing. Anything in
    ``human_override`` (actor, rationale, override triple) is merged into
    ``human_override_record`` as given.
    """
    decision_id = str(decision_id)
    if not is_uuid(decision_id):
        raise FormatError("decision_context.decision_id", f"{decision_id!r} is not a UUID")
    if not token_allowed(logic_type, LOGIC_TYPES):
        raise EnumViolation("decision_logic.logic_type", logic_type)
    if evidence_tier not in EVIDENCE_TIERS:
        raise EnumViolation("temporal_metadata.evidence_tier", evidence_tier)
    if not isinstance(decision_type, str) or not decision_type:
        raise FormatError("decision_context.decision_type", "must be a non-empty token")
    if ":" in decision_type and not is_namespaced(decision_type):
        raise EnumViolation("decision_context.decision_type", decision_type)
    if not isinstance(override_occurred, bool):
        raise FormatError("human_override_record.override_occurred", "must be a boolean")
    if isinstance(event_timestamp, datetime):
        event_timestamp = format_timestamp(event_timestamp)

    context: dict[str, Any] = {"decision_id": decision_id, "decision_type": decision_type}
    if system_id is not None:
        context["environment"] = {"system_id": system_id}
    override = {"override_occurred": override_occurred, **(human_override or {})}
    return DecisionEvent(
        {
            "schema_version": schema_version,
            "decision_context": context,
            "decision_logic": {"logic_type": logic_type, "output": output},
            "human_override_record": override,
            "temporal_metadata": {"event_timestamp": event_timestamp, "evidence_tier": evidence_tier},
        }
    )
