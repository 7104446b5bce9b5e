"""Desk-scale feasibility benchmark.

Synthesises drafts for each evidence tier, then times four stages in
isolation: canonicalize+hash, validate, seal+append, and seal+append with
Merkle checkpointing. Only relative properties (tier ratios, payload bands,
rule-count constancy) are assessed; absolute throughput is hardware-bound.
"""

from __future__ import annotations

import hashlib
import os
import platform
import random
import statistics
import sys
import tempfile
import threading
import time
import uuid
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any

from des_ledger.canonical_crypto import Signer, canonicalize
from des_ledger.chain_integrity import CHECKPOINT_INTERVAL
from des_ledger.event_model import SCHEMA_VERSION, DecisionEvent
from des_ledger.event_store import EventStore
from des_ledger.ledger import Ledger
from des_ledger.tiering import TIER_BANDS, assess_size, project_to_tier
from des_ledger.timefmt import format_timestamp
from des_ledger.validator import validate

TIERS = ("lightweight", "sampled", "full")
STAGES = ("hash", "validate", "seal_append", "seal_append_checkpoint")
STORE_STAGES = frozenset({"seal_append", "seal_append_checkpoint"})

# Draft size windows inside each band. Sealing later adds ~205 B (sequence
# number and hash chain), which the sampled and full windows leave room for;
# a sealed lightweight event sits just above its band.
_TARGETS = {
    "lightweight": (300, 420),
    "sampled": (2300, 4400),
    "full": (6000, 16000),
}

_BASE_TIME = datetime(2026, 1, 5, 8, 0, tzinfo=timezone.utc)
_DECISION_TYPES = (
    "credit_approval",
    "fraud_screening",
    "claims_triage",
    "content_moderation",
    "access_control",
    "dynamic_pricing",
)
_OUTPUTS = ("approve", "deny", "review", "escalate", "allow", "block")
_AUTOMATED = ("rule_based", "ml_inference", "policy_evaluation", "hybrid")


def _uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def _hex(rng: random.Random) -> str:
    return "%064x" % rng.getrandbits(256)


def _timestamp(rng: random.Random, base: datetime = _BASE_TIME) -> datetime:
    return base + timedelta(milliseconds=rng.randrange(0, 90 * 86_400_000))


def _contract(rng: random.Random) -> dict[str, Any]:
    return {
        "protocol": rng.choice(("grpc", "https", "kafka")),
        "schema_version": f"{rng.randint(1, 3)}.{rng.randint(0, 9)}.0",
        "sla": {"latency_ms_p99": rng.choice((50, 100, 250)), "availability": rng.choice((0.99, 0.999))},
        "failure_mode": rng.choice(("fail_open", "fail_closed", "degrade", "retry")),
    }


def _small_input(rng: random.Random, i: int) -> dict[str, Any]:
    return {
        "input_id": f"feature_{i:03d}",
        "input_type": "feature",
        "input_value": round(rng.uniform(-100, 100), 4),
        "input_source": rng.choice(("feature_store", "request", "profile_cache")),
        "input_version": f"v{rng.randint(1, 9)}",
    }


def _logic(rng: random.Random, logic_type: str, output: str) -> dict[str, Any]:
    logic: dict[str, Any] = {"logic_type": logic_type, "output": output}
    rule_path = [
        {
            "rule_id": f"rule.{rng.choice(('limit', 'geo', 'velocity', 'kyc'))}.{k}",
            "rule_version": f"{rng.randint(1, 4)}.{rng.randint(0, 9)}.0",
            "rule_result": rng.choice(("match", "no_match")),
        }
        for k in range(rng.randint(2, 6))
    ]
    inference = {
        "model_id": rng.choice(("gbm-risk", "transformer-moderation", "logreg-fraud")),
        "model_version": f"{rng.randint(1, 12)}.{rng.randint(0, 9)}.{rng.randint(0, 9)}",
        "feature_vector_hash": _hex(rng),
        "prediction": round(rng.random(), 4),
        "confidence": round(rng.uniform(0.5, 1.0), 4),
    }
    policy = {
        "policy_id": rng.choice(("authz/allow", "lending/limits", "moderation/publish")),
        "policy_version": f"{rng.randint(1, 5)}.{rng.randint(0, 20)}.0",
        "policy_engine": rng.choice(("OPA", "Cedar", "custom")),
        "evaluation_result": rng.choice((True, False)),
    }
    if logic_type == "rule_based":
        logic["rule_path"] = rule_path
    elif logic_type == "ml_inference":
        logic["model_inference"] = inference
    elif logic_type == "policy_evaluation":
        logic["policy_evaluation"] = policy
    elif logic_type == "hybrid":
        parts = {"rule_path": rule_path, "model_inference": inference, "policy_evaluation": policy}
        for key in rng.sample(sorted(parts), rng.choice((2, 3))):
            logic[key] = parts[key]
        logic["combination_method"] = rng.choice(("voting", "cascading", "overriding", "weighted"))
    alternatives = [o for o in _OUTPUTS if o != output]
    logic["output_alternatives"] = rng.sample(alternatives, 2)
    return logic


def random_full_draft(
    rng: random.Random,
    *,
    system_id: str = "bench",
    logic_type: str | None = None,
    override: bool | None = None,
    big_inputs: int | None = None,
    when: datetime | None = None,
) -> DecisionEvent:
    """One random, valid, full-tier draft with all six field groups populated."""
    logic_type = logic_type or rng.choice(_AUTOMATED + ("human_decision",))
    override = rng.random() < 0.2 if override is None else override
    when = when or _timestamp(rng)
    original = rng.choice(_OUTPUTS)
    output = rng.choice([o for o in _OUTPUTS if o != original]) if override else original

    inputs = [_small_input(rng, i) for i in range(rng.randint(3, 8))]
    for k in range(rng.randint(0, 2) if big_inputs is None else big_inputs):
        inputs.append(
            {
                "input_id": f"embedding_{k}",
                "input_type": "model_output",
                "input_value": [round(rng.uniform(-1, 1), 5) for _ in range(rng.randint(24, 64))],
                "input_source": "encoder",
            }
        )
    context = {
        "decision_id": _uuid(rng),
        "decision_type": rng.choice(_DECISION_TYPES),
        "trigger": rng.choice(("api_request", "batch_job", "stream_event", "scheduled_review")),
        "inputs": inputs,
        "environment": {
            "system_id": system_id,
            "system_version": f"{rng.randint(1, 5)}.{rng.randint(0, 20)}.{rng.randint(0, 9)}",
            "configuration_hash": _hex(rng),
            "deployment_id": rng.choice(("eu-west-1", "us-east-2", "ap-south-1")),
        },
    }
    alerts = []
    if rng.random() < 0.25:
        alerts.append({"metric": "confidence", "threshold": 0.6, "observed": round(rng.uniform(0.3, 0.6), 3)})
    quality = {
        "confidence_score": round(rng.uniform(0.4, 1.0), 4),
        "confidence_components": [
            {"component": name, "score": round(rng.random(), 4)} for name in ("model", "data", "rules")
        ],
        "data_quality": {
            "completeness": round(rng.uniform(0.8, 1.0), 3),
            "freshness": rng.randint(0, 86_400),
            "known_issues": rng.sample(["late_feature", "imputed_income", "stale_profile"], rng.randint(0, 2)),
        },
        "decision_risk_level": rng.choice(("low", "medium", "high", "critical")),
        "threshold_alerts": alerts,
    }
    upstream = [
        {"decision_id": _uuid(rng), "system_id": f"upstream-{k}", "coupling_type": rng.choice(("input", "context", "constraint")), "boundary_contract": _contract(rng)}
        for k in range(rng.randint(1, 2))
    ]
    hor: dict[str, Any] = {"override_occurred": override}
    if logic_type == "human_decision" or override:
        hor["override_actor"] = {
            "actor_id": f"analyst-{rng.randint(100, 999)}",
            "actor_role": rng.choice(("credit_officer", "trust_safety_reviewer", "claims_adjuster")),
            "authorization_level": rng.choice(("L1", "L2", "L3")),
        }
        hor["override_rationale"] = rng.choice(
            (
                "customer supplied updated income documentation",
                "manual review found a false positive match",
                "policy exception approved by supervisor",
            )
        )
    if override:
        hor["override_type"] = rng.choice(("approval", "rejection", "modification", "escalation"))
        hor["original_output"] = original
        hor["overridden_output"] = output
        hor["override_timestamp"] = format_timestamp(when + timedelta(seconds=rng.randint(5, 600)))
        hor["time_to_override"] = rng.randint(5_000, 600_000)
        if logic_type == "human_decision":
            upstream.append({"decision_id": _uuid(rng), "system_id": "review-queue", "coupling_type": "override"})

    doc = {
        "schema_version": SCHEMA_VERSION,
        "decision_context": context,
        "decision_logic": _logic(rng, logic_type, output),
        "decision_boundary": {
            "upstream_decisions": upstream,
            "downstream_consumers": [
                {"system_id": "notification-service", "contract_version": "1.2.0", "boundary_contract": _contract(rng)}
            ],
        },
        "decision_quality_indicators": quality,
        "human_override_record": hor,
        "temporal_metadata": {
            "event_timestamp": format_timestamp(when),
            "processing_duration_ms": rng.randint(1, 250),
            "evidence_tier": "full",
            "retention_policy": {"minimum_retention": rng.choice(("P6M", "P1Y", "P7Y")), "classification": "internal"},
        },
    }
    return DecisionEvent(doc)


def _lightweight_draft(rng: random.Random, when: datetime) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "decision_context": {"decision_id": _uuid(rng), "decision_type": rng.choice(_DECISION_TYPES)},
        "decision_logic": {"logic_type": rng.choice(("rule_based", "ml_inference", "policy_evaluation")), "output": rng.choice(_OUTPUTS)},
        "human_override_record": {"override_occurred": False},
        "temporal_metadata": {"event_timestamp": format_timestamp(when), "evidence_tier": "lightweight"},
    }


def _fit_inputs(doc: dict[str, Any], rng: random.Random, lo: int, hi: int) -> None:
    """Grow or shrink ``decision_context.inputs`` until the canonical size lands in [lo, hi]."""
    target = rng.randint(lo, hi)
    inputs = doc["decision_context"].setdefault("inputs", [])
    size = len(canonicalize(doc))
    while size > hi and len(inputs) > 1:
        dropped = inputs.pop()
        size -= len(canonicalize(dropped)) + 1
    i = len(inputs)
    while size < target:
        rec = _small_input(rng, i)
        inputs.append(rec)
        size += len(canonicalize(rec)) + 1
        i += 1
    if size > hi and len(inputs) > 1:
        size -= len(canonicalize(inputs.pop())) + 1


def generate_synthetic(tier: str, seed: int, n: int, *, system_id: str = "bench") -> list[DecisionEvent]:
    """``n`` deterministic drafts, valid at ``tier`` and sized inside that tier's band."""
    if tier not in TIER_BANDS:
        raise ValueError(f"unknown tier {tier!r}")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random.Random(f"{tier}:{seed}")
    lo, hi = _TARGETS[tier]
    drafts = []
    clock = _timestamp(rng)
    for _ in range(n):
        clock += timedelta(milliseconds=rng.randint(1, 5000))
        if tier == "lightweight":
            doc = _lightweight_draft(rng, clock)
            size = len(canonicalize(doc))
            if size < lo:
                doc["decision_context"]["trigger"] = "t" * (rng.randint(lo, hi) - size - len(',"trigger":""'))
        else:
            full = random_full_draft(rng, system_id=system_id, big_inputs=4 if tier == "full" else 1, when=clock)
            doc = (full if tier == "full" else project_to_tier(full, "sampled")).to_dict()
            _fit_inputs(doc, rng, lo, hi)
        drafts.append(DecisionEvent(doc))
    return drafts


def pad_event(draft: DecisionEvent, size: int, key: str = "bench:padding") -> DecisionEvent:
    """Grow ``draft`` to roughly ``size`` canonical bytes with a namespaced filler field."""
    base = len(canonicalize(draft))
    filler = max(0, size - base - len(f',"{key}":""'))
    return DecisionEvent({**draft.to_dict(), key: "x" * filler})


# -- measurement ---------------------------------------------------------------


@dataclass
class BenchConfig:
    tiers: tuple[str, ...] = TIERS
    stages: tuple[str, ...] = STAGES
    events: int = 1000
    runs: int = 3
    warmup: int = 50
    seed: int = 7
    duration: float | None = None  # seconds across the whole benchmark
    streams: int = 1
    fsync: bool = True
    checkpoint_interval: int = CHECKPOINT_INTERVAL
    store_dir: str | None = None
    signer: Signer | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        for t in self.tiers:
            if t not in TIERS:
                raise ValueError(f"unknown tier {t!r}")
        for s in self.stages:
            if s not in STAGES:
                raise ValueError(f"unknown stage {s!r}")
        if self.runs < 3:
            raise ValueError("at least 3 runs are needed for a stable median")
        if self.events < 1 or self.streams < 1:
            raise ValueError("events and streams must be positive")


@dataclass
class StageResult:
    tier: str
    stage: str
    backend: str
    events: int
    throughput_eps: float
    median_latency_ms: float
    p99_latency_ms: float
    median_payload_bytes: int
    band_assessment: str
    run_throughputs: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class BenchReport:
    machine: dict[str, Any]
    config: dict[str, Any]
    results: list[StageResult]
    rules_evaluated: dict[str, int] = field(default_factory=dict)
    rules_constant_lightweight: bool | None = None

    def get(self, tier: str, stage: str) -> StageResult | None:
        for r in self.results:
            if r.tier == tier and r.stage == stage:
                return r
        return None

    def ratio(self, stage: str = "seal_append") -> float | None:
        t1, t3 = self.get("lightweight", stage), self.get("full", stage)
        if t1 is None or t3 is None or not t3.throughput_eps:
            return None
        return t1.throughput_eps / t3.throughput_eps

    def ratios(self) -> dict[str, float]:
        out = {}
        for stage in STAGES:
            r = self.ratio(stage)
            if r is not None:
                out[f"tier1_over_tier3.{stage}"] = round(r, 3)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "machine": self.machine,
            "config": self.config,
            "results": [r.to_dict() for r in self.results],
            "ratios": self.ratios(),
            "rules_evaluated": self.rules_evaluated,
            "rules_constant_lightweight": self.rules_constant_lightweight,
        }

    def format_table(self) -> str:
        head = f"{'tier':<12}{'stage':<24}{'backend':<14}{'events/s':>12}{'p50 ms':>10}{'p99 ms':>10}{'bytes':>8}  band"
        rows = [head, "-" * len(head)]
        for r in self.results:
            rows.append(
                f"{r.tier:<12}{r.stage:<24}{r.backend:<14}{r.throughput_eps:>12.1f}"
                f"{r.median_latency_ms:>10.4f}{r.p99_latency_ms:>10.4f}{r.median_payload_bytes:>8}  {r.band_assessment}"
            )
        for name, value in self.ratios().items():
            rows.append(f"{name} = {value}")
        return "\n".join(rows)


def machine_descriptor() -> dict[str, Any]:
    return {
        "platform": platform.platform(),
        "python": sys.version.split()[0],
        "implementation": platform.python_implementation(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
    }


def _percentile(sorted_values: Sequence[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    k = min(len(sorted_values) - 1, max(0, int(round(q * (len(sorted_values) - 1)))))
    return sorted_values[k]


def _time_ops(op: Callable[[DecisionEvent], Any], drafts: Sequence[DecisionEvent], budget: float | None) -> list[int]:
    latencies = []
    clock = time.perf_counter_ns
    deadline = None if budget is None else clock() + int(budget * 1e9)
    for d in drafts:
        t0 = clock()
        op(d)
        latencies.append(clock() - t0)
        if deadline is not None and len(latencies) >= 10 and clock() > deadline:
            break
    return latencies


def _hash_op(d: DecisionEvent) -> str:
    return hashlib.sha256(canonicalize(d)).hexdigest()


def _validate_op(d: DecisionEvent) -> Any:
    return validate(d, draft=True)


def _store_run(
    config: BenchConfig, drafts: Sequence[DecisionEvent], tier: str, stage: str, run: int, budget: float | None
) -> tuple[list[int], float]:
    """One timed seal+append run on a fresh store. Returns per-op latencies and wall time."""
    interval = config.checkpoint_interval if stage == "seal_append_checkpoint" else 1 << 62
    names = [f"{tier}-{run}-{k}" for k in range(config.streams)]
    shards = [[_retarget(d, names[k]) for d in drafts[k :: config.streams]] for k in range(config.streams)]
    warm = [_retarget(d, "warmup") for d in generate_synthetic(tier, config.seed + 1 + run, max(1, config.warmup))]
    with tempfile.TemporaryDirectory(dir=config.store_dir) as tmp:
        store = EventStore(Path(tmp), fsync=config.fsync)
        ledger = Ledger(store, signer=config.signer, checkpoint_interval=interval)
        for d in warm[: config.warmup]:
            ledger.append(d, "warmup")
        results: list[list[int]] = [[] for _ in names]

        def worker(k: int) -> None:
            results[k] = _time_ops(lambda d: ledger.append(d, names[k]), shards[k], budget)

        t0 = time.perf_counter()
        if config.streams == 1:
            worker(0)
        else:
            threads = [threading.Thread(target=worker, args=(k,)) for k in range(config.streams)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        wall = time.perf_counter() - t0
        store.close()
        return [x for r in results for x in r], wall


def _retarget(draft: DecisionEvent, system_id: str) -> DecisionEvent:
    if draft.system_id is None:
        return draft
    return draft.replace("decision_context.environment.system_id", system_id)


def run_benchmark(config: BenchConfig | None = None) -> BenchReport:
    config = config or BenchConfig()
    cells = len(config.tiers) * len(config.stages) * config.runs
    budget = None if config.duration is None else config.duration / cells
    results = []
    rules: dict[str, int] = {}
    for tier in config.tiers:
        drafts = generate_synthetic(tier, config.seed, config.events)
        sizes = sorted(len(canonicalize(d)) for d in drafts)
        payload = int(statistics.median(sizes))
        band = assess_size(payload, tier).assessment
        rules[tier] = validate(drafts[0], draft=True).rules_evaluated
        for stage in config.stages:
            run_eps, run_p50, pooled = [], [], []
            for run in range(config.runs):
                if stage in STORE_STAGES:
                    lat, wall = _store_run(config, drafts, tier, stage, run, budget)
                    eps = len(lat) / wall if config.streams > 1 else len(lat) / (sum(lat) / 1e9)
                else:
                    op = _hash_op if stage == "hash" else _validate_op
                    for d in drafts[: config.warmup]:
                        op(d)
                    lat = _time_ops(op, drafts, budget)
                    eps = len(lat) / (sum(lat) / 1e9)
                run_eps.append(eps)
                run_p50.append(statistics.median(lat) / 1e6)
                pooled.extend(lat)
            pooled.sort()
            backend = ("ndjson+fsync" if config.fsync else "ndjson") if stage in STORE_STAGES else "memory"
            results.append(
                StageResult(
                    tier=tier,
                    stage=stage,
                    backend=backend,
                    events=len(pooled),
                    throughput_eps=statistics.median(run_eps),
                    median_latency_ms=statistics.median(run_p50),
                    p99_latency_ms=_percentile(pooled, 0.99) / 1e6,
                    median_payload_bytes=payload,
                    band_assessment=band,
                    run_throughputs=[round(e, 2) for e in run_eps],
                )
            )
    small = generate_synthetic("lightweight", config.seed, 1)[0]
    padded = pad_event(small, 5 * 1024)
    constant = (
        validate(small, draft=True).rules_evaluated == validate(padded, draft=True).rules_evaluated
    )
    cfg = asdict(config)
    cfg.pop("signer")
    cfg["signed"] = config.signer is not None
    return BenchReport(machine_descriptor(), cfg, results, rules, constant)


# -- envelope --------------------------------------------------------------------


@dataclass
class EnvelopeCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class EnvelopeAssessment:
    checks: list[EnvelopeCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def verdict(self) -> str:
        if self.passed:
            return "consistent with the feasibility envelope"
        failed = ", ".join(c.name for c in self.checks if not c.passed)
        return f"outside the feasibility envelope on: {failed}"

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def format(self) -> str:
        lines = [f"[{'pass' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]
        lines.append(self.verdict)
        return "\n".join(lines)


MIN_TIER_RATIO = 2.0
MAX_HASH_LATENCY_MS = 1.0


def compare_to_envelope(report: BenchReport) -> EnvelopeAssessment:
    """Check ratios, bands and constancy only; absolute numbers are never compared."""
    checks = []
    hashed = report.get("lightweight", "hash")
    if hashed is not None:
        checks.append(
            EnvelopeCheck(
                "tier1_hash_sub_ms",
                hashed.median_latency_ms < MAX_HASH_LATENCY_MS,
                f"lightweight canonicalize+hash median {hashed.median_latency_ms:.4f} ms",
            )
        )
    ratio = report.ratio("seal_append")
    if ratio is not None:
        checks.append(
            EnvelopeCheck(
                "tier1_tier3_ratio",
                ratio >= MIN_TIER_RATIO,
                f"lightweight/full seal+append throughput ratio {ratio:.2f} (need >= {MIN_TIER_RATIO:g})",
            )
        )
    if report.rules_constant_lightweight is not None:
        checks.append(
            EnvelopeCheck(
                "tier1_validation_constant",
                report.rules_constant_lightweight,
                "lightweight rules_evaluated identical for small and padded payloads",
            )
        )
    seen = set()
    for r in report.results:
        if r.tier in seen:
            continue
        seen.add(r.tier)
        est = assess_size(r.median_payload_bytes, r.tier)
        lo, hi = est.band
        checks.append(
            EnvelopeCheck(
                f"{r.tier}_band",
                est.assessment == "within",
                f"median payload {r.median_payload_bytes} B vs band {lo}-{hi} B ({est.assessment})",
            )
        )
    return EnvelopeAssessment(checks)
