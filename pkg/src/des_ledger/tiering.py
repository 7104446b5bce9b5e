"""Evidence tier policy, tier projection and payload-size accounting."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from des_ledger.canonical_crypto import canonicalize
from des_ledger.event_model import EVIDENCE_TIERS, OVERRIDE_TRIPLE, RISK_LEVELS, DecisionEvent

TIER_RANK = {"lightweight": 1, "sampled": 2, "full": 3}

KB = 1024
# Estimated canonical payload bands per tier, in bytes.
TIER_BANDS: dict[str, tuple[int, int]] = {
    "lightweight": (200, 500),
    "sampled": (2 * KB, 5 * KB),
    "full": (5 * KB, 20 * KB),
}

# Inputs above this canonical size are replaced by their digest at the sampled tier.
SAMPLED_INPUT_VALUE_LIMIT = 256


def max_tier(*tiers: str) -> str:
    return max(tiers, key=TIER_RANK.__getitem__)


@dataclass(frozen=True)
class TierPolicy:
    default_tier: str = "lightweight"
    force_tier3_on_override: bool = True
    force_tier3_on_alerts: bool = True
    min_tier_for_risk: Mapping[str, str] = field(
        default_factory=lambda: {"low": "lightweight", "medium": "lightweight", "high": "sampled", "critical": "full"}
    )
    tier2_sample_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.default_tier not in EVIDENCE_TIERS:
            raise ValueError(f"default_tier {self.default_tier!r} is not a tier")
        if not 0.0 <= self.tier2_sample_rate <= 1.0:
            raise ValueError("tier2_sample_rate must be in [0, 1]")
        missing = RISK_LEVELS - set(self.min_tier_for_risk)
        if missing:
            raise ValueError(f"min_tier_for_risk does not cover {sorted(missing)}")
        for level, tier in self.min_tier_for_risk.items():
            if tier not in EVIDENCE_TIERS:
                raise ValueError(f"min_tier_for_risk[{level}] = {tier!r} is not a tier")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TierPolicy:
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown tier policy keys: {sorted(unknown)}")
        if "min_tier_for_risk" in known:
            known["min_tier_for_risk"] = dict(known["min_tier_for_risk"])
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> TierPolicy:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return {
            "default_tier": self.default_tier,
            "force_tier3_on_override": self.force_tier3_on_override,
            "force_tier3_on_alerts": self.force_tier3_on_alerts,
            "min_tier_for_risk": dict(self.min_tier_for_risk),
            "tier2_sample_rate": self.tier2_sample_rate,
            "seed": self.seed,
        }


def _sample_point(decision_id: str, seed: int) -> float:
    digest = hashlib.sha256(f"{seed}:{decision_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def select_tier(draft: DecisionEvent, policy: TierPolicy) -> str:
    """Pick the evidence tier for ``draft``; deterministic for a given policy seed."""
    human = draft.override_occurred is True or draft.logic_type == "human_decision"
    alerts = bool(draft.get_path("decision_quality_indicators.threshold_alerts"))
    if policy.force_tier3_on_override and human:
        return "full"
    if policy.force_tier3_on_alerts and alerts:
        return "full"
    tier = policy.default_tier
    if alerts:
        tier = max_tier(tier, "sampled")
    risk = draft.get_path("decision_quality_indicators.decision_risk_level")
    if risk in policy.min_tier_for_risk:
        tier = max_tier(tier, policy.min_tier_for_risk[risk])
    if TIER_RANK[tier] < TIER_RANK["sampled"] and policy.tier2_sample_rate > 0:
        if _sample_point(str(draft.decision_id), policy.seed) < policy.tier2_sample_rate:
            tier = "sampled"
    return tier


def apply_policy(draft: DecisionEvent, policy: TierPolicy) -> DecisionEvent:
    """Route ``draft`` to the tier the policy selects, projecting it down if needed.

    A draft that lacks the content its selected tier needs is left to fail
    validation rather than being padded.
    """
    return project_to_tier(draft, select_tier(draft, policy))


def _lightweight_override(hor: Mapping[str, Any], logic_type: Any) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if "override_occurred" in hor:
        out["override_occurred"] = hor["override_occurred"]
    occurred = hor.get("override_occurred") is True
    if logic_type == "human_decision" or occurred:
        for key in ("override_actor", "override_rationale"):
            if key in hor:
                out[key] = hor[key]
    if occurred:
        for key in OVERRIDE_TRIPLE:
            if key in hor:
                out[key] = hor[key]
    return out


def _abbreviate_input(record: Mapping[str, Any]) -> dict[str, Any]:
    rec = dict(record)
    if "input_value" in rec:
        raw = canonicalize(rec["input_value"])
        if len(raw) > SAMPLED_INPUT_VALUE_LIMIT:
            rec["input_value"] = hashlib.sha256(raw).hexdigest()
    return rec


def project_to_tier(full_draft: DecisionEvent, tier: str) -> DecisionEvent:
    """Reduce a full-tier draft to the content of ``tier``.

    Lightweight keeps the required minimum plus mandatory override and
    attribution fields. Sampled adds the decision context (large input
    values replaced by digests), the logic sub-object(s) the logic type
    needs, and risk level plus threshold alerts.
    """
    if tier not in EVIDENCE_TIERS:
        raise ValueError(f"{tier!r} is not a tier")
    if tier == "full":
        return full_draft.replace("temporal_metadata.evidence_tier", "full")
    src = full_draft.to_dict()
    ctx = src.get("decision_context", {})
    logic = src.get("decision_logic", {})
    logic_type = logic.get("logic_type")
    tm = {k: v for k, v in src.get("temporal_metadata", {}).items() if k != "digital_signature"}
    tm["evidence_tier"] = tier

    out: dict[str, Any] = {}
    if "schema_version" in src:
        out["schema_version"] = src["schema_version"]
    out["temporal_metadata"] = tm
    out["human_override_record"] = _lightweight_override(src.get("human_override_record", {}), logic_type)
    new_logic = {k: logic[k] for k in ("logic_type", "output") if k in logic}
    out["decision_logic"] = new_logic

    # the human-over-human link is checked at every tier, so it survives projection
    if logic_type == "human_decision" and out["human_override_record"].get("override_occurred") is True:
        upstream = src.get("decision_boundary", {}).get("upstream_decisions", [])
        links = [u for u in upstream if u.get("coupling_type") == "override"]
        if links:
            out["decision_boundary"] = {"upstream_decisions": links}

    if tier == "lightweight":
        out["decision_context"] = {k: ctx[k] for k in ("decision_id", "decision_type") if k in ctx}
        return DecisionEvent(out)

    new_ctx = dict(ctx)
    if "inputs" in new_ctx:
        new_ctx["inputs"] = [_abbreviate_input(r) for r in new_ctx["inputs"]]
    out["decision_context"] = new_ctx
    wanted = {
        "ml_inference": ("model_inference",),
        "rule_based": ("rule_path",),
        "policy_evaluation": ("policy_evaluation",),
        "hybrid": ("model_inference", "rule_path", "policy_evaluation", "combination_method"),
    }.get(logic_type, ())
    for key in wanted:
        if key in logic:
            new_logic[key] = logic[key]
    dqi = src.get("decision_quality_indicators", {})
    kept = {k: dqi[k] for k in ("decision_risk_level", "threshold_alerts") if k in dqi}
    if kept:
        out["decision_quality_indicators"] = kept
    hor = src.get("human_override_record", {})
    if hor.get("override_occurred") is True and "override_type" in hor:
        out["human_override_record"]["override_type"] = hor["override_type"]
    for key, value in src.items():
        if ":" in key:
            out[key] = value
    return DecisionEvent(out)


@dataclass(frozen=True)
class PayloadEstimate:
    size: int
    tier: str | None
    band: tuple[int, int] | None
    assessment: str  # below | within | above | unknown

    def to_dict(self) -> dict[str, Any]:
        return {"size": self.size, "tier": self.tier, "band": list(self.band) if self.band else None, "assessment": self.assessment}


def assess_size(size: int, tier: str | None) -> PayloadEstimate:
    band = TIER_BANDS.get(tier) if tier else None
    if band is None:
        return PayloadEstimate(size, tier, None, "unknown")
    lo, hi = band
    assessment = "below" if size < lo else "above" if size > hi else "within"
    return PayloadEstimate(size, tier, band, assessment)


def estimate_payload_size(draft: DecisionEvent, tier: str | None = None) -> PayloadEstimate:
    return assess_size(len(canonicalize(draft)), tier or draft.evidence_tier)
