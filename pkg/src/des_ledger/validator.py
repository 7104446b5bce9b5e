"""Rule engine for decision event validation.

Rules are evaluated in catalog order and never short-circuit, so a report
lists every violation. Logic-type sub-object rules (R2*) only run at the
sampled and full tiers; every other rule runs at all tiers, which keeps the
lightweight rule count fixed regardless of payload.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from des_ledger.event_model import (
    COMBINATION_METHODS,
    COUPLING_TYPES,
    EVIDENCE_TIERS,
    FAILURE_MODES,
    HEX64,
    INPUT_TYPES,
    LOGIC_TYPES,
    OVERRIDE_TRIPLE,
    OVERRIDE_TYPES,
    POLICY_ENGINES,
    REQUIRED_PATHS,
    RISK_LEVELS,
    RULE_RESULTS,
    SEAL_ASSIGNED_PATHS,
    SEMVER,
    TOP_LEVEL_GROUPS,
    U64_MAX,
    DecisionEvent,
    is_namespaced,
    is_uuid,
    token_allowed,
)
from des_ledger.timefmt import is_timestamp, parse_duration

TIER2_PLUS = frozenset({"sampled", "full"})
LOGIC_SUBOBJECTS = ("model_inference", "rule_path", "policy_evaluation")


@dataclass(frozen=True)
class Finding:
    rule_id: str
    path: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"rule_id": self.rule_id, "path": self.path, "message": self.message}


@dataclass
class ValidationReport:
    valid: bool
    violations: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)
    rules_evaluated: int = 0
    tier: str | None = None

    def rule_ids(self) -> set[str]:
        return {v.rule_id for v in self.violations}

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "violations": [v.to_dict() for v in self.violations],
            "warnings": [w.to_dict() for w in self.warnings],
            "rules_evaluated": self.rules_evaluated,
            "tier": self.tier,
        }


class _Ctx:
    """Per-call accumulator handed to each rule."""

    __slots__ = ("event", "draft", "violations", "warnings", "rule_id")

    def __init__(self, event: DecisionEvent, draft: bool) -> None:
        self.event = event
        self.draft = draft
        self.violations: list[Finding] = []
        self.warnings: list[Finding] = []
        self.rule_id = ""

    def fail(self, path: str, message: str) -> None:
        self.violations.append(Finding(self.rule_id, path, message))

    def warn(self, path: str, message: str) -> None:
        self.warnings.append(Finding(self.rule_id, path, message))

    def get(self, path: str, default: Any = None) -> Any:
        return self.event.get_path(path, default)

    def has(self, path: str) -> bool:
        return self.event.has_path(path)


@dataclass(frozen=True)
class Rule:
    rule_id: str
    tiers: str  # "all" | "tier2+"
    description: str
    anchor: str
    check: Callable[[_Ctx], None]


# -- R1 ------------------------------------------------------------------------


def _check_required(ctx: _Ctx) -> None:
    for path in REQUIRED_PATHS:
        if ctx.draft and path in SEAL_ASSIGNED_PATHS:
            continue
        if not ctx.has(path):
            ctx.fail(path, "required field is missing")
    ev = ctx.event
    if ev.has_path("schema_version") and not (
        isinstance(ev.schema_version, str) and SEMVER.match(ev.schema_version)
    ):
        ctx.fail("schema_version", "must be a semantic version string")
    did = ctx.get("decision_context.decision_id")
    if did is not None and not is_uuid(did):
        ctx.fail("decision_context.decision_id", "must be a UUID")
    dtype = ctx.get("decision_context.decision_type")
    if dtype is not None and not (isinstance(dtype, str) and dtype):
        ctx.fail("decision_context.decision_type", "must be a non-empty string")
    occurred = ctx.get("human_override_record.override_occurred")
    if occurred is not None and not isinstance(occurred, bool):
        ctx.fail("human_override_record.override_occurred", "must be a boolean")
    ts = ctx.get("temporal_metadata.event_timestamp")
    if ts is not None and not is_timestamp(ts):
        ctx.fail("temporal_metadata.event_timestamp", "must be RFC 3339 UTC with millisecond precision")
    seq = ctx.get("temporal_metadata.sequence_number")
    if seq is not None and not (isinstance(seq, int) and not isinstance(seq, bool) and 1 <= seq <= U64_MAX):
        ctx.fail("temporal_metadata.sequence_number", "must be an unsigned 64-bit integer >= 1")
    chain = ctx.get("temporal_metadata.hash_chain")
    if chain is not None:
        if not isinstance(chain, Mapping):
            ctx.fail("temporal_metadata.hash_chain", "must be an object")
        else:
            for key in ("previous_hash", "current_hash"):
                if key in chain and not (isinstance(chain[key], str) and HEX64.match(chain[key])):
                    ctx.fail(f"temporal_metadata.hash_chain.{key}", "must be 64 lowercase hex characters")
            if "previous_hash" not in chain:
                ctx.fail("temporal_metadata.hash_chain.previous_hash", "required field is missing")
            if "algorithm" in chain and not isinstance(chain["algorithm"], str):
                ctx.fail("temporal_metadata.hash_chain.algorithm", "must be a token")


# -- R2 ------------------------------------------------------------------------


def _require_logic(name: str) -> Callable[[_Ctx], None]:
    logic_type = {"model_inference": "ml_inference", "rule_path": "rule_based"}.get(name, name)

    def check(ctx: _Ctx) -> None:
        if ctx.get("decision_logic.logic_type") == logic_type and not ctx.has(f"decision_logic.{name}"):
            ctx.fail(f"decision_logic.{name}", f"required for logic_type {logic_type} at tier 2+")

    return check


def _check_hybrid(ctx: _Ctx) -> None:
    if ctx.get("decision_logic.logic_type") != "hybrid":
        return
    present = [n for n in LOGIC_SUBOBJECTS if ctx.has(f"decision_logic.{n}")]
    if len(present) < 2:
        ctx.fail("decision_logic", f"hybrid logic needs at least two of {', '.join(LOGIC_SUBOBJECTS)}; found {len(present)}")
    if not ctx.has("decision_logic.combination_method"):
        ctx.fail("decision_logic.combination_method", "required for hybrid logic at tier 2+")


def _check_risk_level(ctx: _Ctx) -> None:
    if not ctx.has("decision_quality_indicators.decision_risk_level"):
        ctx.fail("decision_quality_indicators.decision_risk_level", "required at tier 2+")


# -- R3 / R4 / R4a / R5 ----------------------------------------------------------


def _require_attribution(ctx: _Ctx, why: str) -> None:
    actor = ctx.get("human_override_record.override_actor")
    if actor is None:
        ctx.fail("human_override_record.override_actor", f"required {why}")
    elif not isinstance(actor, Mapping) or not actor.get("actor_id"):
        ctx.fail("human_override_record.override_actor.actor_id", f"required {why}")
    if not ctx.has("human_override_record.override_rationale"):
        ctx.fail("human_override_record.override_rationale", f"required {why}")


def _check_human_attribution(ctx: _Ctx) -> None:
    if ctx.get("decision_logic.logic_type") == "human_decision":
        _require_attribution(ctx, "for human_decision at every tier")


def _check_override_triple(ctx: _Ctx) -> None:
    occurred = ctx.get("human_override_record.override_occurred")
    if occurred is True:
        for name in OVERRIDE_TRIPLE:
            if not ctx.has(f"human_override_record.{name}"):
                ctx.fail(f"human_override_record.{name}", "required when override_occurred is true")
        if ctx.has("human_override_record.overridden_output") and ctx.has("decision_logic.output"):
            if ctx.get("human_override_record.overridden_output") != ctx.get("decision_logic.output"):
                ctx.warn("decision_logic.output", "output differs from human_override_record.overridden_output")
    elif occurred is False:
        for name in OVERRIDE_TRIPLE:
            if ctx.has(f"human_override_record.{name}"):
                ctx.fail(f"human_override_record.{name}", "must be absent when override_occurred is false")


def _check_override_attribution(ctx: _Ctx) -> None:
    if ctx.get("human_override_record.override_occurred") is True:
        if ctx.get("decision_logic.logic_type") != "human_decision":
            _require_attribution(ctx, "when an automated decision is overridden")


def _check_human_over_human(ctx: _Ctx) -> None:
    if ctx.get("decision_logic.logic_type") != "human_decision":
        return
    if ctx.get("human_override_record.override_occurred") is not True:
        return
    upstream = ctx.get("decision_boundary.upstream_decisions") or ()
    linked = any(
        isinstance(ref, Mapping) and ref.get("coupling_type") == "override" and ref.get("decision_id")
        for ref in upstream
    )
    if not linked:
        ctx.fail(
            "decision_boundary.upstream_decisions",
            "a human override of a human decision must be a separate event linked with coupling_type=override",
        )


# -- R6 ------------------------------------------------------------------------


def _enum(ctx: _Ctx, path: str, value: Any, core: frozenset[str]) -> None:
    if not token_allowed(value, core):
        ctx.fail(path, f"{value!r} is not one of {sorted(core)} or a namespaced extension")


def _unit(ctx: _Ctx, path: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 <= value <= 1:
        ctx.fail(path, "must be a number in [0, 1]")


def _count(ctx: _Ctx, path: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        ctx.fail(path, "must be a non-negative integer")


def _as_list(ctx: _Ctx, path: str) -> tuple:
    value = ctx.get(path)
    if value is None:
        return ()
    if not isinstance(value, tuple):
        ctx.fail(path, "must be an array")
        return ()
    return value


def _as_map(ctx: _Ctx, path: str, value: Any) -> Mapping | None:
    if value is None:
        return None
    if not isinstance(value, Mapping):
        ctx.fail(path, "must be an object")
        return None
    return value


def _check_boundary_contract(ctx: _Ctx, path: str, contract: Any) -> None:
    contract = _as_map(ctx, path, contract)
    if contract and "failure_mode" in contract:
        _enum(ctx, f"{path}.failure_mode", contract["failure_mode"], FAILURE_MODES)


def _check_domains(ctx: _Ctx) -> None:
    ev = ctx.event
    for key in ev:
        if key not in TOP_LEVEL_GROUPS and not is_namespaced(key):
            ctx.fail(key, "unknown top-level key; extensions must be namespaced (prefix:name)")
    for group in TOP_LEVEL_GROUPS - {"schema_version"}:
        _as_map(ctx, group, ev.get(group))

    logic_type = ctx.get("decision_logic.logic_type")
    if logic_type is not None:
        _enum(ctx, "decision_logic.logic_type", logic_type, LOGIC_TYPES)
    tier = ctx.get("temporal_metadata.evidence_tier")
    if tier is not None and tier not in EVIDENCE_TIERS:
        ctx.fail("temporal_metadata.evidence_tier", f"{tier!r} is not one of {sorted(EVIDENCE_TIERS)}")
    dtype = ctx.get("decision_context.decision_type")
    if isinstance(dtype, str) and ":" in dtype and not is_namespaced(dtype):
        ctx.fail("decision_context.decision_type", "namespaced values must match prefix:name")

    for i, rec in enumerate(_as_list(ctx, "decision_context.inputs")):
        path = f"decision_context.inputs[{i}]"
        rec = _as_map(ctx, path, rec)
        if rec is None:
            continue
        for key in ("input_id", "input_type"):
            if key not in rec:
                ctx.fail(f"{path}.{key}", "required in every input record")
        if "input_type" in rec:
            _enum(ctx, f"{path}.input_type", rec["input_type"], INPUT_TYPES)
    env = _as_map(ctx, "decision_context.environment", ctx.get("decision_context.environment"))
    if env is not None:
        if "system_id" in env and not (isinstance(env["system_id"], str) and env["system_id"]):
            ctx.fail("decision_context.environment.system_id", "must be a non-empty identifier")
        if "configuration_hash" in env and not (
            isinstance(env["configuration_hash"], str) and HEX64.match(env["configuration_hash"])
        ):
            ctx.fail("decision_context.environment.configuration_hash", "must be 64 lowercase hex characters")

    for i, entry in enumerate(_as_list(ctx, "decision_logic.rule_path")):
        entry = _as_map(ctx, f"decision_logic.rule_path[{i}]", entry)
        if entry is not None:
            if "rule_id" not in entry:
                ctx.fail(f"decision_logic.rule_path[{i}].rule_id", "required in every rule path entry")
            if "rule_result" in entry and entry["rule_result"] not in RULE_RESULTS:
                ctx.fail(f"decision_logic.rule_path[{i}].rule_result", f"must be one of {sorted(RULE_RESULTS)}")
    inference = _as_map(ctx, "decision_logic.model_inference", ctx.get("decision_logic.model_inference"))
    if inference is not None:
        if "confidence" in inference:
            _unit(ctx, "decision_logic.model_inference.confidence", inference["confidence"])
        fvh = inference.get("feature_vector_hash")
        if fvh is not None and not (isinstance(fvh, str) and HEX64.match(fvh)):
            ctx.fail("decision_logic.model_inference.feature_vector_hash", "must be 64 lowercase hex characters")
    policy = _as_map(ctx, "decision_logic.policy_evaluation", ctx.get("decision_logic.policy_evaluation"))
    if policy is not None and "policy_engine" in policy:
        _enum(ctx, "decision_logic.policy_evaluation.policy_engine", policy["policy_engine"], POLICY_ENGINES)
    method = ctx.get("decision_logic.combination_method")
    if method is not None:
        _enum(ctx, "decision_logic.combination_method", method, COMBINATION_METHODS)

    for i, ref in enumerate(_as_list(ctx, "decision_boundary.upstream_decisions")):
        path = f"decision_boundary.upstream_decisions[{i}]"
        ref = _as_map(ctx, path, ref)
        if ref is None:
            continue
        if "decision_id" in ref and not is_uuid(ref["decision_id"]):
            ctx.fail(f"{path}.decision_id", "must be a UUID")
        if "coupling_type" in ref and ref["coupling_type"] not in COUPLING_TYPES:
            ctx.fail(f"{path}.coupling_type", f"must be one of {sorted(COUPLING_TYPES)}")
        if "boundary_contract" in ref:
            _check_boundary_contract(ctx, f"{path}.boundary_contract", ref["boundary_contract"])
    for i, ref in enumerate(_as_list(ctx, "decision_boundary.downstream_consumers")):
        path = f"decision_boundary.downstream_consumers[{i}]"
        ref = _as_map(ctx, path, ref)
        if ref is not None and "boundary_contract" in ref:
            _check_boundary_contract(ctx, f"{path}.boundary_contract", ref["boundary_contract"])

    dqi = ctx.get("decision_quality_indicators")
    if isinstance(dqi, Mapping):
        if "confidence_score" in dqi:
            _unit(ctx, "decision_quality_indicators.confidence_score", dqi["confidence_score"])
        for i, comp in enumerate(_as_list(ctx, "decision_quality_indicators.confidence_components")):
            comp = _as_map(ctx, f"decision_quality_indicators.confidence_components[{i}]", comp)
            if comp is not None and "score" in comp:
                _unit(ctx, f"decision_quality_indicators.confidence_components[{i}].score", comp["score"])
        quality = _as_map(ctx, "decision_quality_indicators.data_quality", dqi.get("data_quality"))
        if quality is not None:
            if "completeness" in quality:
                _unit(ctx, "decision_quality_indicators.data_quality.completeness", quality["completeness"])
            if "freshness" in quality:
                _count(ctx, "decision_quality_indicators.data_quality.freshness", quality["freshness"])
        if "decision_risk_level" in dqi and dqi["decision_risk_level"] not in RISK_LEVELS:
            ctx.fail("decision_quality_indicators.decision_risk_level", f"must be one of {sorted(RISK_LEVELS)}")
        _as_list(ctx, "decision_quality_indicators.threshold_alerts")

    hor = ctx.get("human_override_record")
    if isinstance(hor, Mapping):
        if "override_type" in hor:
            _enum(ctx, "human_override_record.override_type", hor["override_type"], OVERRIDE_TYPES)
        _as_map(ctx, "human_override_record.override_actor", hor.get("override_actor"))
        if "override_timestamp" in hor and not is_timestamp(hor["override_timestamp"]):
            ctx.fail("human_override_record.override_timestamp", "must be RFC 3339 UTC with millisecond precision")
        if "time_to_override" in hor:
            _count(ctx, "human_override_record.time_to_override", hor["time_to_override"])

    tm = ctx.get("temporal_metadata")
    if isinstance(tm, Mapping):
        if "processing_duration_ms" in tm:
            _count(ctx, "temporal_metadata.processing_duration_ms", tm["processing_duration_ms"])
        sig = _as_map(ctx, "temporal_metadata.digital_signature", tm.get("digital_signature"))
        if sig is not None:
            for key in ("signer_id", "signature_value", "algorithm"):
                if key not in sig:
                    ctx.fail(f"temporal_metadata.digital_signature.{key}", "required in digital_signature")
        retention = _as_map(ctx, "temporal_metadata.retention_policy", tm.get("retention_policy"))
        if retention is not None and "minimum_retention" in retention:
            try:
                parse_duration(retention["minimum_retention"])
            except ValueError:
                ctx.fail("temporal_metadata.retention_policy.minimum_retention", "must be an ISO 8601 duration")


RULES: tuple[Rule, ...] = (
    Rule("R1", "all", "Ten required fields are present and well-formed", "required-fields", _check_required),
    Rule("R2a", "tier2+", "ml_inference requires model_inference", "logic-subobject", _require_logic("model_inference")),
    Rule("R2b", "tier2+", "rule_based requires rule_path", "logic-subobject", _require_logic("rule_path")),
    Rule("R2c", "tier2+", "policy_evaluation requires policy_evaluation", "logic-subobject", _require_logic("policy_evaluation")),
    Rule("R2d", "tier2+", "hybrid requires two of three logic sub-objects and combination_method", "logic-subobject", _check_hybrid),
    Rule("R2e", "tier2+", "decision_risk_level is required", "risk-identification", _check_risk_level),
    Rule("R3", "all", "human_decision requires override_actor and override_rationale", "human-attribution", _check_human_attribution),
    Rule("R4", "all", "override triple present iff override_occurred", "override-triggered", _check_override_triple),
    Rule("R4a", "all", "overrides of automated logic require actor and rationale", "override-attribution", _check_override_attribution),
    Rule("R5", "all", "human-over-human overrides must link upstream with coupling_type=override", "override-separation", _check_human_over_human),
    Rule("R6", "all", "enumerations, namespaces and value domains", "enumeration-closure", _check_domains),
)


def rule_catalog() -> list[dict[str, str]]:
    return [
        {"rule_id": r.rule_id, "tier_applicability": r.tiers, "description": r.description, "anchor": r.anchor}
        for r in RULES
    ]


def validate(event: DecisionEvent, *, tier: str | None = None, draft: bool = False) -> ValidationReport:
    """Run the rule set against ``event``.

    ``tier`` overrides the event's own ``evidence_tier`` for rule gating.
    ``draft=True`` accepts a missing ``sequence_number`` and ``hash_chain``,
    which are assigned at sealing.
    """
    effective = tier if tier is not None else event.evidence_tier
    ctx = _Ctx(event, draft)
    evaluated = 0
    for rule in RULES:
        if rule.tiers == "tier2+" and effective not in TIER2_PLUS:
            continue
        ctx.rule_id = rule.rule_id
        rule.check(ctx)
        evaluated += 1
    return ValidationReport(
        valid=not ctx.violations,
        violations=ctx.violations,
        warnings=ctx.warnings,
        rules_evaluated=evaluated,
        tier=effective if isinstance(effective, str) else None,
    )


def validate_batch(
    events: Iterable[DecisionEvent], *, tier: str | None = None, draft: bool = False
) -> list[ValidationReport]:
    return [validate(e, tier=tier, draft=draft) for e in events]
