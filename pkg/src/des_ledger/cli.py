"""``des`` command-line entry point.

Exit codes: 0 success or compliant, 1 findings (invalid events, chain
findings, rejected drafts, non-satisfied profile), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

from des_ledger import __version__
from des_ledger.bench_harness import STAGES, TIERS, BenchConfig, compare_to_envelope, run_benchmark
from des_ledger.canonical_crypto import Signer, canonicalize, load_private_key
from des_ledger.compliance import BUILTIN_PROFILES, compliance_report, format_report
from des_ledger.errors import ConversionError, DesError, ParseError, RejectedInvalid, UsageError
from des_ledger.event_model import DecisionEvent, load_json
from des_ledger.event_store import EventStore
from des_ledger.ingest_service import IngestConfig, serve
from des_ledger.ledger import Ledger
from des_ledger.opa_adapter import ConversionConfig, convert_opa_decision, iter_opa_log
from des_ledger.tiering import TierPolicy
from des_ledger.timefmt import parse_timestamp, utc_now
from des_ledger.validator import validate

log = logging.getLogger("des")

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2


# -- input helpers -------------------------------------------------------------


def _expand(paths: list[str]) -> Iterator[Path]:
    for name in paths:
        path = Path(name)
        if path.is_dir():
            yield from sorted(p for p in path.rglob("*") if p.suffix in (".json", ".ndjson") and p.is_file())
        elif path.is_file() or name == "-":
            yield path
        else:
            raise UsageError(f"no such file or directory: {name}")


def read_documents(path: Path) -> Iterator[tuple[str, Any]]:
    """Yield (label, parsed document or ParseError) from a .json or NDJSON file."""
    text = sys.stdin.read() if str(path) == "-" else path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if path.suffix != ".ndjson" and stripped.startswith(("{", "[")):
        try:
            doc = load_json(text)
        except ParseError as exc:
            yield str(path), exc
            return
        if isinstance(doc, list):
            for i, item in enumerate(doc):
                yield f"{path}[{i}]", item
        else:
            yield str(path), doc
        return
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield f"{path}:{lineno}", load_json(line)
        except ParseError as exc:
            yield f"{path}:{lineno}", exc


def _to_event(doc: Any) -> DecisionEvent:
    if isinstance(doc, ParseError):
        raise doc
    if not isinstance(doc, dict):
        raise ParseError("event document must be a JSON object", 0)
    return DecisionEvent(doc)


def _signer(args: argparse.Namespace) -> Signer | None:
    if not getattr(args, "signing_key", None):
        return None
    key = load_private_key(Path(args.signing_key).read_bytes())
    return Signer(key, args.signer_id, args.certificate_ref)


def _policy(args: argparse.Namespace) -> TierPolicy | None:
    path = getattr(args, "tier_policy", None)
    return TierPolicy.load(path) if path else None


def _emit(args: argparse.Namespace, payload: Any, text: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


# -- commands ------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    results = []
    for path in _expand(args.files):
        for label, doc in read_documents(path):
            try:
                event = _to_event(doc)
            except ParseError as exc:
                results.append({"source": label, "valid": False, "error": str(exc)})
                continue
            draft = not args.sealed and not event.is_sealed
            report = validate(event, tier=args.tier_override, draft=draft)
            results.append({"source": label, **report.to_dict()})
    valid = sum(1 for r in results if r["valid"])
    summary = {"files": len(results), "valid": valid, "invalid": len(results) - valid}
    lines = []
    for r in results:
        if "error" in r:
            lines.append(f"{r['source']}: PARSE ERROR {r['error']}")
            continue
        status = "valid" if r["valid"] else "INVALID"
        lines.append(f"{r['source']}: {status} (tier {r['tier']}, {r['rules_evaluated']} rules)")
        for v in r["violations"]:
            lines.append(f"  {v['rule_id']} {v['path']}: {v['message']}")
        for w in r["warnings"]:
            lines.append(f"  warning {w['rule_id']} {w['path']}: {w['message']}")
    lines.append(f"{summary['valid']}/{summary['files']} valid")
    _emit(args, {"summary": summary, "reports": results}, "\n".join(lines))
    return EXIT_OK if summary["invalid"] == 0 and results else EXIT_FINDINGS


def _open_ledger(args: argparse.Namespace) -> Ledger:
    store = EventStore(Path(args.store), fsync=not getattr(args, "no_fsync", False))
    return Ledger(
        store,
        signer=_signer(args),
        tier_policy=_policy(args),
        deployment_key=getattr(args, "deployment_key", None),
    )


def _seal_all(ledger: Ledger, drafts: Iterator[tuple[str, Any]], system_id: str | None, checkpoint: bool) -> dict:
    sealed, rejected = [], []
    streams = set()
    for label, doc in drafts:
        try:
            draft = ledger.prepare(_to_event(doc))
            event = ledger.append(draft, system_id)
        except RejectedInvalid as exc:
            rejected.append({"source": label, "report": exc.report.to_dict()})
            continue
        except DesError as exc:
            rejected.append({"source": label, "error": str(exc)})
            continue
        stream = system_id or event.system_id
        streams.add(stream)
        sealed.append(
            {"source": label, "system_id": stream, "decision_id": event.decision_id,
             "sequence_number": event.sequence_number, "current_hash": event.current_hash}
        )
    if checkpoint:
        for stream in sorted(streams):
            ledger.checkpoint(stream)
    return {"sealed": sealed, "rejected": rejected}


def _format_seal(result: dict) -> str:
    lines = [f"sealed {r['decision_id']} as {r['system_id']}#{r['sequence_number']}" for r in result["sealed"]]
    for r in result["rejected"]:
        if "report" in r:
            rules = ", ".join(f"{v['rule_id']} {v['path']}" for v in r["report"]["violations"])
            lines.append(f"rejected {r['source']}: {rules}")
        else:
            lines.append(f"rejected {r['source']}: {r['error']}")
    lines.append(f"{len(result['sealed'])} sealed, {len(result['rejected'])} rejected")
    return "\n".join(lines)


def cmd_seal(args: argparse.Namespace) -> int:
    ledger = _open_ledger(args)
    try:
        drafts = (item for path in _expand(args.inputs) for item in read_documents(path))
        result = _seal_all(ledger, drafts, args.system_id, args.checkpoint)
    finally:
        ledger.store.close()
    _emit(args, result, _format_seal(result))
    return EXIT_FINDINGS if result["rejected"] else EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    with EventStore(Path(args.store), read_only=True) as store:
        streams = args.system_id or store.streams()
        reports = {}
        for sid in streams:
            if not store.has_stream(sid):
                raise UsageError(f"unknown stream {sid!r}")
            reports[sid] = store.verify_stream(sid).to_dict()
    lines = []
    for sid, r in reports.items():
        status = "clean" if not r["findings"] else f"{len(r['findings'])} findings"
        lines.append(f"{sid}: {r['events_checked']} events, {status}")
        for f in r["findings"]:
            lines.append(f"  [{f['kind']}] line {f['index']} seq {f['sequence_number']}: {f['message']}")
        for w in r["warnings"]:
            lines.append(f"  warning [{w['kind']}] line {w['index']}: {w['message']}")
    if not reports:
        lines.append("store holds no streams")
    _emit(args, reports, "\n".join(lines))
    return EXIT_FINDINGS if any(r["findings"] for r in reports.values()) else EXIT_OK


def cmd_enrich(args: argparse.Namespace) -> int:
    raw = args.payload
    if raw.startswith("@"):
        raw = Path(raw[1:]).read_text(encoding="utf-8")
    try:
        payload = load_json(raw)
    except ParseError as exc:
        raise UsageError(f"--payload is not JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise UsageError("--payload must be a JSON object")
    ledger = _open_ledger(args)
    try:
        record = ledger.enrich(args.decision_id, args.kind, payload, args.created_at)
    except KeyError:
        raise UsageError(f"unknown decision {args.decision_id}") from None
    finally:
        ledger.store.close()
    _emit(args, record.to_dict(), f"enrichment {record.enrichment_id} linked with {record.link_hash}")
    return EXIT_OK


def cmd_convert_opa(args: argparse.Namespace) -> int:
    config = ConversionConfig(
        decision_type=args.decision_type,
        evidence_tier=args.tier,
        decision_risk_level=args.risk_level,
        system_id=args.system_id,
        sensitive_fields=frozenset(args.sensitive or ()),
        deployment_key=args.deployment_key,
        retention=args.retention,
    )
    drafts, failures = [], []
    for i, entry in enumerate(iter_opa_log(Path(args.log))):
        try:
            drafts.append(convert_opa_decision(entry, config))
        except ConversionError as exc:
            failures.append({"entry": i, "error": str(exc)})
    out = b"".join(canonicalize(d) + b"\n" for d in drafts)
    if args.out:
        Path(args.out).write_bytes(out)
    result: dict[str, Any] = {"converted": len(drafts), "failed": failures}
    lines = [f"entry {f['entry']}: {f['error']}" for f in failures]
    if args.seal:
        ledger = _open_ledger(args)
        try:
            sealed = _seal_all(ledger, ((f"opa[{i}]", d.to_dict()) for i, d in enumerate(drafts)), args.system_id, True)
        finally:
            ledger.store.close()
        result.update(sealed)
        lines.append(_format_seal(sealed))
    elif not args.out:
        sys.stdout.write(out.decode("utf-8"))
    lines.append(f"{len(drafts)} converted, {len(failures)} failed")
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print("\n".join(lines), file=sys.stderr if not (args.out or args.seal) else sys.stdout)
    return EXIT_FINDINGS if failures or result.get("rejected") else EXIT_OK


def _seconds(text: str) -> float:
    text = text.strip()
    for suffix, scale in (("ms", 1e-3), ("s", 1.0), ("m", 60.0)):
        if text.endswith(suffix) and text[: -len(suffix)].replace(".", "", 1).isdigit():
            return float(text[: -len(suffix)]) * scale
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"bad duration {text!r}; use e.g. 10s, 500ms, 2m") from None


def _choices(text: str, allowed: tuple[str, ...], what: str) -> tuple[str, ...]:
    if text == "all":
        return allowed
    picked = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in picked if t not in allowed]
    if bad or not picked:
        raise UsageError(f"unknown {what} {bad}; choose from {', '.join(allowed)} or all")
    return picked


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        config = BenchConfig(
            tiers=_choices(args.tiers, TIERS, "tiers"),
            stages=_choices(args.stages, STAGES, "stages"),
            events=args.events,
            runs=args.runs,
            warmup=args.warmup,
            seed=args.seed,
            duration=_seconds(args.duration) if args.duration else None,
            streams=args.streams,
            fsync=not args.no_fsync,
            signer=_signer(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_benchmark(config)
    envelope = compare_to_envelope(report)
    payload = {**report.to_dict(), "envelope": envelope.to_dict()}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _emit(args, payload, report.format_table() + "\n\n" + envelope.format())
    return EXIT_OK if envelope.passed else EXIT_FINDINGS


def cmd_report(args: argparse.Namespace) -> int:
    with EventStore(Path(args.store), read_only=True) as store:
        report = compliance_report(store, args.profile)
    _emit(args, report, format_report(report))
    return EXIT_OK if report["verdict"] == "satisfied" else EXIT_FINDINGS


def cmd_retention(args: argparse.Namespace) -> int:
    try:
        now = parse_timestamp(args.now or utc_now())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with EventStore(Path(args.store), fsync=not args.no_fsync) as store:
        removed = store.enforce_retention(now, dry_run=args.dry_run)
    verb = "would remove" if args.dry_run else "removed"
    lines = [f"{sid}: {verb} segments {', '.join(map(str, segs))}" for sid, segs in removed.items()]
    _emit(args, removed, "\n".join(lines) or "nothing past retention")
    return EXIT_OK


def cmd_keygen(args: argparse.Namespace) -> int:
    key = ed25519.Ed25519PrivateKey.generate() if args.algorithm == "ed25519" else ec.generate_private_key(ec.SECP256R1())
    pem = key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
    out = Path(args.out)
    out.write_bytes(pem)
    out.chmod(0o600)
    public = key.public_key().public_bytes(serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)
    out.with_suffix(".pub.pem").write_bytes(public)
    print(f"wrote {out} and {out.with_suffix('.pub.pem')}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    environ = dict(os.environ)
    for flag, var in (("listen", "DES_LISTEN"), ("signing_key", "DES_SIGNING_KEY")):
        if getattr(args, flag):
            environ[var] = getattr(args, flag)
    if args.store_flag:
        environ["DES_STORE"] = args.store_flag
    if args.tier_policy_flag:
        environ["DES_TIER_POLICY"] = args.tier_policy_flag
    try:
        config = IngestConfig.load(args.config, environ)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad service configuration: {exc}") from None
    serve(config)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_store(p: argparse.ArgumentParser) -> None:
    p.add_argument("--store", default=os.environ.get("DES_STORE", "des-store"), help="store directory (env DES_STORE)")


def _add_signing(p: argparse.ArgumentParser) -> None:
    p.add_argument("--signing-key", help="PEM private key (ed25519 or ecdsa-p256)")
    p.add_argument("--signer-id", default="des-cli")
    p.add_argument("--certificate-ref", default="urn:des:cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="des", description="Decision event ledger tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate event files, NDJSON streams or directories")
    p.add_argument("files", nargs="+")
    p.add_argument("--tier-override", choices=TIERS, help="gate rules as if events declared this tier")
    p.add_argument("--sealed", action="store_true", help="require sequence_number and hash_chain")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("seal", help="validate, seal and append drafts to a store")
    p.add_argument("inputs", nargs="+", help="draft files (.json, .ndjson) or directories; - for stdin")
    _add_store(p)
    p.add_argument("--system-id", help="stream to append to (default: each draft's system_id)")
    p.add_argument("--tier-policy", default=os.environ.get("DES_TIER_POLICY"), help="tier policy JSON (env DES_TIER_POLICY)")
    p.add_argument("--deployment-key", help="key for hashing inputs flagged input_value_sensitive")
    p.add_argument("--checkpoint", action="store_true", help="commit a checkpoint over any trailing batch")
    p.add_argument("--no-fsync", action="store_true")
    _add_signing(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_seal)

    p = sub.add_parser("verify", help="verify stored bytes, hash chains and checkpoints")
    _add_store(p)
    p.add_argument("--system-id", action="append", help="stream to verify (repeatable; default all)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("enrich", help="attach an enrichment record to a sealed event")
    p.add_argument("decision_id")
    p.add_argument("--kind", required=True, help="ground_truth, quality_update or a namespaced kind")
    p.add_argument("--payload", required=True, help="JSON object, or @file")
    p.add_argument("--created-at", help="RFC 3339 UTC millisecond timestamp (default now)")
    _add_store(p)
    _add_signing(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("convert-opa", help="convert an OPA decision log (NDJSON or JSON array)")
    p.add_argument("log")
    p.add_argument("--out", help="write drafts as NDJSON here (default stdout)")
    p.add_argument("--seal", action="store_true", help="seal the drafts into --store")
    _add_store(p)
    p.add_argument("--system-id", default="opa")
    p.add_argument("--tier", choices=TIERS, default="sampled")
    p.add_argument("--decision-type", default="policy_enforcement")
    p.add_argument("--risk-level", default="low", choices=("low", "medium", "high", "critical"))
    p.add_argument("--sensitive", action="append", help="top-level input key to hash (repeatable)")
    p.add_argument("--deployment-key")
    p.add_argument("--retention", help="ISO 8601 minimum_retention for converted events, e.g. P6M")
    p.add_argument("--no-fsync", action="store_true")
    _add_signing(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_convert_opa)

    p = sub.add_parser("bench", help="desk-scale feasibility benchmark")
    p.add_argument("--tiers", default="all")
    p.add_argument("--stages", default="all")
    p.add_argument("--duration", help="overall time budget, e.g. 10s (caps events per run)")
    p.add_argument("--events", type=int, default=1000, help="events per run")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--streams", type=int, default=1, help="parallel streams, one writer each")
    p.add_argument("--no-fsync", action="store_true")
    p.add_argument("--out", help="write the JSON report here")
    _add_signing(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="compliance report for a regulatory profile")
    p.add_argument("--profile", required=True, help=f"{', '.join(BUILTIN_PROFILES)} or a profile JSON path")
    _add_store(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("retention", help="delete closed segments past their retention")
    _add_store(p)
    p.add_argument("--now", help="reference time (default current UTC time)")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--no-fsync", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_retention)

    p = sub.add_parser("keygen", help="create a signing key pair")
    p.add_argument("--out", required=True)
    p.add_argument("--algorithm", choices=("ed25519", "ecdsa-p256"), default="ed25519")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("serve", help="run the HTTP ingest service")
    p.add_argument("--config", help="service config JSON")
    p.add_argument("--listen", help="host:port (env DES_LISTEN)")
    p.add_argument("--store", dest="store_flag", help="store directory (env DES_STORE)")
    p.add_argument("--tier-policy", dest="tier_policy_flag", help="tier policy JSON (env DES_TIER_POLICY)")
    p.add_argument("--signing-key")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"des: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"des: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"des: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DesError as exc:
        print(f"des: {exc}", file=sys.stderr)
        return EXIT_FINDINGS


if __name__ == "__main__":
    sys.exit(main())
