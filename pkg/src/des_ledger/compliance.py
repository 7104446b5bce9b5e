"""Regulatory compliance reports over a store.

Profiles are bundled JSON documents (``des_ledger/profiles``). Each lists
checks of a few data-driven kinds, and each check says what a failing
outcome does to the stream verdict (``warning``, ``partial`` or
``insufficient``). The report only reads the store.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from des_ledger.errors import DesError, UsageError
from des_ledger.event_model import EVIDENCE_TIERS, is_namespaced
from des_ledger.event_store import EventStore
from des_ledger.tiering import TIER_RANK
from des_ledger.timefmt import duration_at_least, parse_duration, parse_timestamp

BUILTIN_PROFILES = ("eu-ai-act", "gdpr-logic", "nist-au")
CHECK_KINDS = frozenset({"hash_chain", "retention", "tier_coverage", "signature", "pseudonymization"})
VERDICT_RANK = {"satisfied": 0, "partial": 1, "insufficient": 2}
_DIGEST = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class ComplianceProfile:
    profile_id: str
    title: str
    minimum_tier: str
    retention: str | None
    checks: tuple[dict[str, Any], ...]

    def __post_init__(self) -> None:
        if self.profile_id not in BUILTIN_PROFILES and not is_namespaced(self.profile_id):
            raise UsageError(f"profile id {self.profile_id!r} is neither built-in nor namespaced")
        if self.minimum_tier not in EVIDENCE_TIERS:
            raise UsageError(f"profile {self.profile_id}: unknown minimum_tier {self.minimum_tier!r}")
        for check in self.checks:
            if check.get("kind") not in CHECK_KINDS:
                raise UsageError(f"profile {self.profile_id}: unknown check kind {check.get('kind')!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ComplianceProfile:
        try:
            return cls(
                profile_id=data["profile_id"],
                title=data.get("title", data["profile_id"]),
                minimum_tier=data.get("minimum_tier", "lightweight"),
                retention=data.get("retention"),
                checks=tuple(dict(c) for c in data.get("checks", ())),
            )
        except KeyError as exc:
            raise UsageError(f"profile lacks {exc.args[0]}") from None


def load_profile(name: str) -> ComplianceProfile:
    """Load a built-in profile by id, or a profile JSON file by path."""
    if name in BUILTIN_PROFILES:
        text = resources.files("des_ledger").joinpath("profiles", f"{name}.json").read_text(encoding="utf-8")
    else:
        path = Path(name)
        if not path.is_file():
            raise UsageError(f"unknown profile {name!r}; built-ins are {', '.join(BUILTIN_PROFILES)}")
        text = path.read_text(encoding="utf-8")
    try:
        return ComplianceProfile.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise UsageError(f"profile {name!r} is not valid JSON: {exc}") from None


def _worse(a: str, b: str) -> str:
    return a if VERDICT_RANK[a] >= VERDICT_RANK[b] else b


class _StreamFacts:
    """Everything the checks need, gathered in one pass over a stream."""

    def __init__(self, store: EventStore, system_id: str) -> None:
        self.system_id = system_id
        self.verification = store.verify_stream(system_id)
        self.tiers: Counter[str] = Counter()
        self.events = 0
        self.signed = 0
        self.retention: list[tuple[str | None, str | None]] = []
        self.inputs = 0
        self.hashed_inputs = 0
        for event in store.scan(system_id):
            self.events += 1
            self.tiers[str(event.evidence_tier)] += 1
            if event.has_path("temporal_metadata.digital_signature.signature_value"):
                self.signed += 1
            self.retention.append(
                (event.get_path("temporal_metadata.retention_policy.minimum_retention"), event.event_timestamp)
            )
            for record in event.get_path("decision_context.inputs", ()):
                self.inputs += 1
                if isinstance(record.get("input_value"), str) and _DIGEST.match(record["input_value"]):
                    self.hashed_inputs += 1


def _check_hash_chain(facts: _StreamFacts, check: dict[str, Any]) -> tuple[bool, str]:
    v = facts.verification
    if v.clean:
        return True, f"hash chain verified over {v.events_checked} events"
    kinds = Counter(f.kind for f in v.findings)
    return False, "chain findings: " + ", ".join(f"{k}={n}" for k, n in sorted(kinds.items()))


def _check_retention(facts: _StreamFacts, check: dict[str, Any]) -> tuple[bool, str]:
    minimum = check["minimum"]
    parse_duration(minimum)
    missing = short = 0
    for value, ts in facts.retention:
        if value is None:
            missing += 1
            continue
        try:
            anchor = parse_timestamp(ts) if ts else None
            ok = duration_at_least(value, minimum, anchor)
        except (ValueError, DesError):
            ok = False
        if not ok:
            short += 1
    if not facts.retention:
        return False, "stream holds no events"
    if missing or short:
        return False, f"{missing} events lack minimum_retention, {short} retain less than {minimum}"
    return True, f"all {len(facts.retention)} events retain at least {minimum}"


def _tier_coverage(facts: _StreamFacts, check: dict[str, Any]) -> str:
    floor = TIER_RANK[check.get("minimum_tier", "sampled")]
    covered = sum(n for tier, n in facts.tiers.items() if TIER_RANK.get(tier, 0) >= floor)
    if facts.events and covered == facts.events:
        return "all"
    return "some" if covered else "none"


def _check_signature(facts: _StreamFacts, check: dict[str, Any]) -> tuple[bool, str]:
    if facts.events and facts.signed == facts.events:
        return True, f"all {facts.events} events carry digital_signature"
    return False, f"{facts.signed} of {facts.events} events carry digital_signature"


def _evaluate_stream(facts: _StreamFacts, profile: ComplianceProfile) -> dict[str, Any]:
    verdict = "satisfied"
    results = []
    warnings = []
    notes = []
    for check in profile.checks:
        kind = check["kind"]
        effect = None
        if kind == "tier_coverage":
            coverage = _tier_coverage(facts, check)
            passed = coverage == "all"
            effect = check.get(f"on_{coverage}") if coverage != "all" else None
            detail = f"{check.get('minimum_tier', 'sampled')}+ coverage: {coverage}"
        elif kind == "pseudonymization":
            passed = True
            detail = f"{facts.hashed_inputs} of {facts.inputs} input values are digests"
            notes.append(check.get("label", kind))
        else:
            passed, detail = {
                "hash_chain": _check_hash_chain,
                "retention": _check_retention,
                "signature": _check_signature,
            }[kind](facts, check)
            effect = None if passed else check.get("on_fail", "insufficient")
        if effect == "warning":
            warnings.append(f"{check['id']}: {check.get('label', kind)}")
        elif effect in VERDICT_RANK:
            verdict = _worse(verdict, effect)
        results.append(
            {"id": check["id"], "kind": kind, "status": "pass" if passed else "fail", "effect": effect, "detail": detail}
        )
    out = {
        "events": facts.events,
        "tier_counts": {t: facts.tiers.get(t, 0) for t in ("lightweight", "sampled", "full")},
        "chain": {
            "clean": facts.verification.clean,
            "findings": len(facts.verification.findings),
        },
        "checks": results,
        "warnings": warnings,
        "notes": notes,
        "verdict": verdict,
    }
    if any(c["kind"] == "signature" for c in profile.checks):
        out["non_repudiation"] = "identity-bound" if facts.events and facts.signed == facts.events else "integrity-only"
    return out


def compliance_report(store: EventStore, profile: ComplianceProfile | str) -> dict[str, Any]:
    if isinstance(profile, str):
        profile = load_profile(profile)
    streams = {sid: _evaluate_stream(_StreamFacts(store, sid), profile) for sid in store.streams()}
    overall = "insufficient" if not streams else "satisfied"
    for result in streams.values():
        overall = _worse(overall, result["verdict"])
    return {
        "profile": profile.profile_id,
        "title": profile.title,
        "streams": streams,
        "verdict": overall,
    }


def format_report(report: dict[str, Any]) -> str:
    lines = [f"profile {report['profile']}: {report['title']}"]
    for sid, s in report["streams"].items():
        tiers = " ".join(f"{t}={n}" for t, n in s["tier_counts"].items())
        lines.append(f"  stream {sid}: {s['verdict']} ({s['events']} events; {tiers})")
        for c in s["checks"]:
            lines.append(f"    [{c['status']}] {c['id']}: {c['detail']}")
        for w in s["warnings"]:
            lines.append(f"    warning: {w}")
        if "non_repudiation" in s:
            lines.append(f"    non-repudiation: {s['non_repudiation']}")
    lines.append(f"overall: {report['verdict']}")
    return "\n".join(lines)
