"""HTTP ingest facade: validate, tier, seal, append, verify.

``IngestApp.handle`` is a plain function of (method, target, body) so it can
be exercised without sockets; ``make_server`` wraps it in the stdlib
threading HTTP server. Writes are serialised per stream by the ledger.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, unquote, urlsplit

from des_ledger.canonical_crypto import Signer, canonicalize, load_private_key
from des_ledger.enrichment import resolve_view
from des_ledger.errors import (
    DuplicateDecision,
    DuplicateSequence,
    FormatError,
    ParseError,
    RejectedInvalid,
    StaleEnrichment,
    StreamMismatch,
)
from des_ledger.event_model import DecisionEvent, load_json
from des_ledger.event_store import EventStore
from des_ledger.ledger import Ledger
from des_ledger.tiering import TierPolicy

log = logging.getLogger(__name__)

ENV_OVERRIDES = {
    "DES_LISTEN": "listen",
    "DES_STORE": "store",
    "DES_TIER_POLICY": "tier_policy",
    "DES_SIGNING_KEY": "signing_key",
    "DES_DEPLOYMENT_KEY": "deployment_key",
}


@dataclass(frozen=True)
class IngestConfig:
    listen: str = "127.0.0.1:8080"
    store: str = "des-store"
    tier_policy: str | None = None
    signing_key: str | None = None
    signer_id: str = "des-ingest"
    certificate_ref: str = "urn:des:ingest"
    deployment_key: str | None = field(default=None, repr=False)
    fsync: bool = True

    @property
    def address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)

    @classmethod
    def load(cls, path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> IngestConfig:
        """Config file (JSON) first, then ``DES_*`` environment overrides."""
        data: dict[str, Any] = {}
        if path is not None:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            unknown = set(data) - set(cls.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**data)
        environ = os.environ if environ is None else environ
        overrides = {attr: environ[var] for var, attr in ENV_OVERRIDES.items() if environ.get(var)}
        return replace(config, **overrides)

    def check(self) -> None:
        store = Path(self.store)
        store.mkdir(parents=True, exist_ok=True)
        if not os.access(store, os.W_OK):
            raise ValueError(f"store path {store} is not writable")
        self.address  # noqa: B018 - raises on a malformed listen address


def build_ledger(config: IngestConfig) -> Ledger:
    config.check()
    signer = None
    if config.signing_key:
        key = load_private_key(Path(config.signing_key).read_bytes())
        signer = Signer(key, config.signer_id, config.certificate_ref)
    policy = TierPolicy.load(config.tier_policy) if config.tier_policy else None
    store = EventStore(Path(config.store), fsync=config.fsync)
    return Ledger(store, signer=signer, tier_policy=policy, deployment_key=config.deployment_key)


@dataclass
class Response:
    status: int
    body: bytes
    content_type: str = "application/json"

    def json(self) -> Any:
        return json.loads(self.body)


def _json(status: int, payload: Any) -> Response:
    return Response(status, json.dumps(payload, sort_keys=True).encode("utf-8"))


def _error(status: int, message: str, **extra: Any) -> Response:
    return _json(status, {"error": message, **extra})


def _server_assigned(draft: DecisionEvent) -> Response | None:
    paths = [
        p
        for p in ("temporal_metadata.sequence_number", "temporal_metadata.hash_chain")
        if draft.has_path(p)
    ]
    if not paths:
        return None
    report = {
        "valid": False,
        "violations": [
            {"rule_id": "R1", "path": p, "message": "assigned by the server at sealing; drafts must omit it"}
            for p in paths
        ],
        "warnings": [],
        "rules_evaluated": 0,
        "tier": draft.evidence_tier,
    }
    return _json(422, report)


class IngestApp:
    def __init__(self, ledger: Ledger) -> None:
        self.ledger = ledger

    @property
    def store(self) -> EventStore:
        return self.ledger.store

    def handle(self, method: str, target: str, body: bytes = b"") -> Response:
        url = urlsplit(target)
        parts = [unquote(p) for p in url.path.strip("/").split("/")]
        query = {k: v[-1] for k, v in parse_qs(url.query).items()}
        try:
            return self._route(method.upper(), parts, query, body)
        except Exception:
            log.exception("unhandled error for %s %s", method, target)
            return _error(500, "internal error; nothing was appended")

    def _route(self, method: str, parts: list[str], query: dict[str, str], body: bytes) -> Response:
        if parts[:1] != ["v1"]:
            return _error(404, "not found")
        rest = parts[1:]
        if rest == ["events"]:
            return self.post_event(body, query.get("system_id")) if method == "POST" else _error(405, "use POST")
        if len(rest) == 2 and rest[0] == "events":
            return self.get_event(rest[1]) if method == "GET" else _error(405, "use GET")
        if len(rest) == 3 and rest[0] == "events" and rest[2] == "enrichments":
            return self.get_enrichments(rest[1]) if method == "GET" else _error(405, "use GET")
        if rest == ["enrichments"]:
            return self.post_enrichment(body) if method == "POST" else _error(405, "use POST")
        if len(rest) == 3 and rest[0] == "streams" and rest[2] == "verify":
            return self.verify(rest[1]) if method == "GET" else _error(405, "use GET")
        return _error(404, "not found")

    def post_event(self, body: bytes, system_id: str | None = None) -> Response:
        try:
            doc = load_json(body)
            if not isinstance(doc, dict):
                raise ParseError("event document must be a JSON object", 0)
            draft = DecisionEvent(doc)
        except ParseError as exc:
            return _error(400, str(exc))
        rejected = _server_assigned(draft)
        if rejected is not None:
            return rejected
        if draft.is_sealed:
            return _error(422, "drafts must not carry current_hash")
        draft = self.ledger.prepare(draft)
        stream = system_id or draft.system_id
        if not stream:
            return _error(400, "no stream: set decision_context.environment.system_id or ?system_id=")
        try:
            sealed = self.ledger.append(draft, stream)
        except RejectedInvalid as exc:
            return _json(422, exc.report.to_dict())
        except (DuplicateDecision, DuplicateSequence) as exc:
            return _error(409, str(exc))
        except StreamMismatch as exc:
            return _error(400, str(exc))
        return _json(
            201,
            {
                "decision_id": sealed.decision_id,
                "system_id": stream,
                "sequence_number": sealed.sequence_number,
                "current_hash": sealed.current_hash,
                "evidence_tier": sealed.evidence_tier,
            },
        )

    def get_event(self, decision_id: str) -> Response:
        raw = self.store.lookup_raw(decision_id)
        if raw is None:
            return _error(404, f"unknown decision {decision_id}")
        return Response(200, raw)

    def get_enrichments(self, decision_id: str) -> Response:
        event = self.store.lookup(decision_id)
        if event is None:
            return _error(404, f"unknown decision {decision_id}")
        view = resolve_view(event, self.store.enrichments(decision_id))
        return _json(200, [r.to_dict() for r in view.enrichments])

    def post_enrichment(self, body: bytes) -> Response:
        try:
            doc = load_json(body)
        except ParseError as exc:
            return _error(400, str(exc))
        if not isinstance(doc, dict) or not all(k in doc for k in ("decision_id", "kind", "payload")):
            return _error(400, "body needs decision_id, kind and payload")
        try:
            record = self.ledger.enrich(str(doc["decision_id"]), doc["kind"], doc["payload"], doc.get("created_at"))
        except KeyError:
            return _error(404, f"unknown decision {doc['decision_id']}")
        except StaleEnrichment as exc:
            return _error(409, str(exc))
        except (FormatError, ParseError) as exc:
            return _error(422, str(exc))
        return Response(201, canonicalize(record.to_dict()))

    def verify(self, system_id: str) -> Response:
        if not self.store.has_stream(system_id):
            return _error(404, f"unknown stream {system_id}")
        return _json(200, self.store.verify_stream(system_id).to_dict())


class _Handler(BaseHTTPRequestHandler):
    app: IngestApp
    protocol_version = "HTTP/1.1"

    def _dispatch(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        response = self.app.handle(self.command, self.path, body)
        self.send_response(response.status, HTTPStatus(response.status).phrase)
        self.send_header("Content-Type", response.content_type)
        self.send_header("Content-Length", str(len(response.body)))
        self.end_headers()
        self.wfile.write(response.body)

    do_GET = do_POST = do_PUT = do_DELETE = _dispatch

    def log_message(self, format: str, *args: Any) -> None:
        log.info("%s %s", self.address_string(), format % args)


def make_server(app: IngestApp, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("IngestHandler", (_Handler,), {"app": app})
    return ThreadingHTTPServer((host, port), handler)


def serve(config: IngestConfig) -> None:
    ledger = build_ledger(config)
    host, port = config.address
    server = make_server(IngestApp(ledger), host, port)
    log.info("listening on %s:%d, store %s", host, port, config.store)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        ledger.store.close()
