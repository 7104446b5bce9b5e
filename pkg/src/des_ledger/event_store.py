"""Append-only NDJSON segment store.

Layout under the store root, one directory per stream (directory name is the
percent-encoded ``system_id``)::

    <stream>/000001.events.ndjson   sealed events, canonical bytes + LF
    <stream>/000001.events.idx      sidecar index, one JSON line per event
    <stream>/000001.enrich.ndjson   enrichments whose target lives in segment 1
    <stream>/checkpoints.ndjson     Merkle checkpoints
    <stream>/anchor.json            chain head just before the oldest kept event
                                    (written only when retention removed segments)

Segment files are the source of truth. The in-memory index and the sidecar
files are rebuilt from them on open, after any partially written trailing
line has been truncated.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections.abc import Iterator
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any
from urllib.parse import quote, unquote

from des_ledger.canonical_crypto import canonicalize
from des_ledger.chain_integrity import (
    ChainFinding,
    ChainStreamState,
    ChainVerificationReport,
    Checkpoint,
    verify_chain,
    verify_checkpoints,
)
from des_ledger.enrichment import EnrichmentRecord
from des_ledger.errors import (
    DesError,
    DuplicateDecision,
    DuplicateSequence,
    RejectUnsealed,
    StaleEnrichment,
    StreamMismatch,
)
from des_ledger.event_model import DecisionEvent, load_json, parse_event, serialize_event
from des_ledger.timefmt import parse_duration, parse_timestamp

log = logging.getLogger(__name__)

DEFAULT_MAX_SEGMENT_BYTES = 64 * 1024 * 1024
EVENTS_SUFFIX = ".events.ndjson"
INDEX_SUFFIX = ".events.idx"
ENRICH_SUFFIX = ".enrich.ndjson"
CHECKPOINTS_FILE = "checkpoints.ndjson"
ANCHOR_FILE = "anchor.json"


@dataclass(frozen=True)
class Location:
    system_id: str
    segment: int
    offset: int
    length: int


@dataclass
class _Stream:
    system_id: str
    path: Path
    segments: list[int] = field(default_factory=list)
    by_seq: dict[int, Location] = field(default_factory=dict)
    head: ChainStreamState | None = None
    anchor: ChainStreamState | None = None
    active_size: int = 0
    checkpoints: list[Checkpoint] = field(default_factory=list)

    def segment_path(self, n: int, suffix: str = EVENTS_SUFFIX) -> Path:
        return self.path / f"{n:06d}{suffix}"


def _recover_tail(path: Path) -> bytes:
    """Read a line file, truncating an unterminated trailing line in place."""
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        keep = data.rfind(b"\n") + 1
        log.warning("truncating %d-byte partial line at end of %s", len(data) - keep, path)
        with path.open("r+b") as fh:
            fh.truncate(keep)
            fh.flush()
            os.fsync(fh.fileno())
        data = data[:keep]
    return data


def _lines(data: bytes) -> Iterator[tuple[int, bytes]]:
    """Complete LF-terminated lines; an unterminated tail is not a record."""
    offset = 0
    while offset < len(data):
        end = data.find(b"\n", offset)
        if end < 0:
            return
        yield offset, data[offset:end]
        offset = end + 1


class EventStore:
    """Append-only storage for sealed events, enrichments and checkpoints.

    One appender per store instance: writes are serialised by an internal
    lock. Readers may run concurrently; an index entry becomes visible only
    after its line has been written (and fsynced when ``fsync=True``).

    ``read_only=True`` opens an existing store without repairing or touching
    any file (partial tails are ignored, not truncated) and refuses writes.
    """

    def __init__(
        self,
        root: str | Path,
        *,
        max_segment_bytes: int = DEFAULT_MAX_SEGMENT_BYTES,
        fsync: bool = True,
        read_only: bool = False,
    ) -> None:
        self.root = Path(root)
        self.read_only = read_only
        if read_only:
            if not self.root.is_dir():
                raise FileNotFoundError(f"no store at {self.root}")
        else:
            self.root.mkdir(parents=True, exist_ok=True)
        self.max_segment_bytes = max_segment_bytes
        self.fsync = fsync
        self._lock = threading.RLock()
        self._streams: dict[str, _Stream] = {}
        self._by_decision: dict[str, Location] = {}
        self._enrichments: dict[str, list[EnrichmentRecord]] = {}
        self._handles: dict[Path, Any] = {}
        for child in sorted(self.root.iterdir()):
            if child.is_dir():
                self._load_stream(unquote(child.name), child)

    # -- lifecycle ---------------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            for handle in self._handles.values():
                handle.close()
            self._handles.clear()

    def __enter__(self) -> EventStore:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _read_lines_file(self, path: Path) -> bytes:
        return path.read_bytes() if self.read_only else _recover_tail(path)

    def _check_writable(self) -> None:
        if self.read_only:
            raise PermissionError(f"store {self.root} is open read-only")

    def _load_stream(self, system_id: str, path: Path) -> _Stream:
        stream = _Stream(system_id, path)
        anchor_path = path / ANCHOR_FILE
        if anchor_path.exists():
            data = json.loads(anchor_path.read_text(encoding="utf-8"))
            stream.anchor = ChainStreamState(system_id, data["last_sequence"], data["last_hash"])
            stream.head = stream.anchor
        stream.segments = sorted(int(p.name.split(".")[0]) for p in path.glob(f"*{EVENTS_SUFFIX}"))
        for n in stream.segments:
            data = self._read_lines_file(stream.segment_path(n))
            index_lines = []
            for offset, raw in _lines(data):
                loc = Location(system_id, n, offset, len(raw))
                try:
                    event = parse_event(raw)
                except DesError:
                    continue
                seq = event.sequence_number
                if isinstance(seq, int):
                    stream.by_seq.setdefault(seq, loc)
                    if event.current_hash:
                        stream.head = ChainStreamState(system_id, seq, event.current_hash)
                if event.decision_id:
                    self._by_decision.setdefault(event.decision_id, loc)
                index_lines.append(self._index_line(event, loc))
            if not self.read_only:
                self._sync_sidecar(stream.segment_path(n, INDEX_SUFFIX), b"".join(index_lines))
            stream.active_size = len(data)
            enrich_path = stream.segment_path(n, ENRICH_SUFFIX)
            if enrich_path.exists():
                for _, raw in _lines(self._read_lines_file(enrich_path)):
                    try:
                        record = EnrichmentRecord.from_dict(load_json(raw))
                    except (DesError, ValueError, TypeError):
                        log.warning("skipping unreadable enrichment line in %s", enrich_path)
                        continue
                    self._enrichments.setdefault(record.decision_id, []).append(record)
        cp_path = path / CHECKPOINTS_FILE
        if cp_path.exists():
            for _, raw in _lines(self._read_lines_file(cp_path)):
                stream.checkpoints.append(Checkpoint.from_dict(load_json(raw)))
        self._streams[system_id] = stream
        return stream

    @staticmethod
    def _index_line(event: DecisionEvent, loc: Location) -> bytes:
        entry = {
            "sequence_number": event.sequence_number,
            "decision_id": event.decision_id,
            "offset": loc.offset,
            "length": loc.length,
        }
        return json.dumps(entry, sort_keys=True, separators=(",", ":")).encode() + b"\n"

    @staticmethod
    def _sync_sidecar(path: Path, expected: bytes) -> None:
        if not path.exists() or path.read_bytes() != expected:
            path.write_bytes(expected)

    # -- low-level writes --------------------------------------------------------

    def _handle(self, path: Path):
        handle = self._handles.get(path)
        if handle is None:
            handle = open(path, "ab", buffering=0)  # noqa: SIM115
            self._handles[path] = handle
        return handle

    def _write_all(self, handle, data: bytes) -> None:
        view = memoryview(data)
        while view:
            written = handle.write(view)
            view = view[written:]

    def _append_line(self, path: Path, line: bytes) -> int:
        """Append ``line`` durably and return its starting offset.

        On any failure the file is cut back to its previous length so no
        partial record survives in-process; a crash mid-write is repaired by
        the tail check on the next open.
        """
        self._check_writable()
        handle = self._handle(path)
        start = os.fstat(handle.fileno()).st_size
        try:
            self._write_all(handle, line)
            if self.fsync:
                os.fsync(handle.fileno())
        except BaseException:
            try:
                os.ftruncate(handle.fileno(), start)
            except OSError:
                log.exception("could not roll back partial write to %s", path)
            raise
        return start

    def _stream(self, system_id: str, create: bool = False) -> _Stream | None:
        stream = self._streams.get(system_id)
        if stream is None and create:
            path = self.root / quote(system_id, safe="")
            path.mkdir(parents=True, exist_ok=True)
            stream = _Stream(system_id, path)
            self._streams[system_id] = stream
        return stream

    # -- events ------------------------------------------------------------------

    def append(self, event: DecisionEvent, system_id: str | None = None) -> Location:
        if not event.is_sealed:
            raise RejectUnsealed(f"event {event.decision_id} is not sealed")
        if system_id is None:
            system_id = event.system_id
        if not system_id:
            raise StreamMismatch("event carries no system_id and none was given")
        if event.system_id is not None and event.system_id != system_id:
            raise StreamMismatch(f"event names stream {event.system_id!r}, appending to {system_id!r}")
        seq = event.sequence_number
        line = serialize_event(event) + b"\n"
        self._check_writable()
        with self._lock:
            stream = self._stream(system_id, create=True)
            last = stream.head.last_sequence if stream.head else 0
            if seq in stream.by_seq or seq <= last:
                raise DuplicateSequence(f"stream {system_id!r} already holds sequence {seq} (head {last})")
            if event.decision_id in self._by_decision:
                raise DuplicateDecision(f"decision {event.decision_id} is already stored")
            if not stream.segments:
                stream.segments.append(1)
                stream.active_size = 0
            elif stream.active_size and stream.active_size + len(line) > self.max_segment_bytes:
                stream.segments.append(stream.segments[-1] + 1)
                stream.active_size = 0
            n = stream.segments[-1]
            offset = self._append_line(stream.segment_path(n), line)
            loc = Location(system_id, n, offset, len(line) - 1)
            stream.active_size = offset + len(line)
            try:
                self._append_line(stream.segment_path(n, INDEX_SUFFIX), self._index_line(event, loc))
            except OSError:
                log.exception("sidecar index write failed; it will be rebuilt on next open")
            stream.by_seq[seq] = loc
            stream.head = ChainStreamState(system_id, seq, event.current_hash)
            self._by_decision[event.decision_id] = loc
            return loc

    def read_bytes(self, loc: Location) -> bytes:
        stream = self._streams[loc.system_id]
        with open(stream.segment_path(loc.segment), "rb") as fh:
            fh.seek(loc.offset)
            return fh.read(loc.length)

    def streams(self) -> list[str]:
        return sorted(self._streams)

    def has_stream(self, system_id: str) -> bool:
        return system_id in self._streams

    def head(self, system_id: str) -> ChainStreamState:
        stream = self._streams.get(system_id)
        if stream is None or stream.head is None:
            return ChainStreamState(system_id)
        return stream.head

    def anchor(self, system_id: str) -> ChainStreamState:
        stream = self._streams.get(system_id)
        return (stream.anchor if stream and stream.anchor else None) or ChainStreamState(system_id)

    def locate(self, decision_id: str) -> Location | None:
        return self._by_decision.get(decision_id)

    def lookup_raw(self, decision_id: str) -> bytes | None:
        loc = self.locate(decision_id)
        return None if loc is None else self.read_bytes(loc)

    def lookup(self, decision_id: str) -> DecisionEvent | None:
        raw = self.lookup_raw(decision_id)
        return None if raw is None else parse_event(raw)

    def stream_of(self, decision_id: str) -> str | None:
        loc = self.locate(decision_id)
        return loc.system_id if loc else None

    def raw_lines(self, system_id: str) -> Iterator[bytes]:
        """Every stored line of a stream in file order, parseable or not."""
        stream = self._streams.get(system_id)
        if stream is None:
            return
        for n in list(stream.segments):
            path = stream.segment_path(n)
            if not path.exists():
                continue
            for _, raw in _lines(path.read_bytes()):
                yield raw

    def scan(self, system_id: str, from_sequence: int = 1) -> Iterator[DecisionEvent]:
        for raw in self.raw_lines(system_id):
            try:
                event = parse_event(raw)
            except DesError:
                log.warning("skipping unparseable line in stream %s", system_id)
                continue
            seq = event.sequence_number
            if isinstance(seq, int) and seq >= from_sequence:
                yield event

    def count(self, system_id: str) -> int:
        stream = self._streams.get(system_id)
        return len(stream.by_seq) if stream else 0

    # -- enrichments -------------------------------------------------------------

    def append_enrichment(self, record: EnrichmentRecord) -> None:
        with self._lock:
            loc = self.locate(record.decision_id)
            if loc is None:
                raise KeyError(record.decision_id)
            target = parse_event(self.read_bytes(loc))
            if not record.binds_to(target):
                raise StaleEnrichment(f"enrichment {record.enrichment_id} does not bind to stored event")
            stream = self._streams[loc.system_id]
            line = canonicalize(record.to_dict()) + b"\n"
            self._append_line(stream.segment_path(loc.segment, ENRICH_SUFFIX), line)
            self._enrichments.setdefault(record.decision_id, []).append(record)

    def enrichments(self, decision_id: str) -> list[EnrichmentRecord]:
        return list(self._enrichments.get(decision_id, ()))

    # -- checkpoints -------------------------------------------------------------

    def append_checkpoint(self, checkpoint: Checkpoint) -> None:
        with self._lock:
            stream = self._stream(checkpoint.system_id, create=True)
            line = canonicalize(checkpoint.to_dict()) + b"\n"
            self._append_line(stream.path / CHECKPOINTS_FILE, line)
            stream.checkpoints.append(checkpoint)

    def checkpoints(self, system_id: str) -> list[Checkpoint]:
        stream = self._streams.get(system_id)
        return list(stream.checkpoints) if stream else []

    # -- verification ------------------------------------------------------------

    def verify_stream(self, system_id: str) -> ChainVerificationReport:
        """Verify stored bytes, the hash chain and checkpoints of one stream.

        Stored lines must parse and must equal the canonical serialisation of
        what they parse to, so any byte-level edit is caught even before the
        hash comparison.
        """
        report = ChainVerificationReport(system_id)
        events: list[DecisionEvent] = []
        line_of: list[int] = []
        for index, raw in enumerate(self.raw_lines(system_id)):
            try:
                event = parse_event(raw)
            except DesError as exc:
                report.findings.append(ChainFinding("parse_error", index, None, str(exc)))
                continue
            try:
                canonical = serialize_event(event)
            except DesError as exc:
                canonical = str(exc).encode()
            if canonical != raw:
                report.findings.append(
                    ChainFinding("non_canonical", index, event.sequence_number, "stored bytes are not canonical")
                )
            events.append(event)
            line_of.append(index)
        chain = verify_chain(events, anchor=self.anchor(system_id), system_id=system_id)
        remap = lambda f: ChainFinding(f.kind, line_of[f.index], f.sequence_number, f.message)  # noqa: E731
        report.findings.extend(remap(f) for f in chain.findings)
        report.warnings.extend(remap(w) for w in chain.warnings)
        report.findings.sort(key=lambda f: f.index)
        report.events_checked = len(line_of) + sum(1 for f in report.findings if f.kind == "parse_error")
        report.head = chain.head
        hashes = {e.sequence_number: e.current_hash for e in events if isinstance(e.sequence_number, int)}
        stream = self._streams.get(system_id)
        if stream and stream.segments:
            tail = stream.segment_path(stream.segments[-1])
            if tail.exists() and tail.stat().st_size and not tail.read_bytes().endswith(b"\n"):
                report.warnings.append(
                    ChainFinding("partial_tail", len(line_of), None, "unterminated trailing write, not a committed record")
                )
        report.findings.extend(
            verify_checkpoints(
                self.checkpoints(system_id), hashes, first_available=self.anchor(system_id).last_sequence + 1
            )
        )
        return report

    # -- retention ---------------------------------------------------------------

    def _segment_expiry(self, stream: _Stream, n: int) -> datetime | None:
        longest = None
        for _, raw in _lines(stream.segment_path(n).read_bytes()):
            event = parse_event(raw)
            minimum = event.get_path("temporal_metadata.retention_policy.minimum_retention")
            if minimum is None:
                return None
            ts = parse_timestamp(event.event_timestamp)
            expiry = parse_duration(minimum).add_to(ts)
            longest = expiry if longest is None else max(longest, expiry)
        return longest

    def expired_segments(self, system_id: str, now: datetime) -> list[int]:
        """Oldest-first run of closed segments whose every event is past retention.

        A segment expires only when all of its events carry a retention policy;
        its expiry is the latest of event_timestamp + minimum_retention.
        """
        stream = self._streams.get(system_id)
        if stream is None:
            return []
        out = []
        for n in stream.segments[:-1]:
            expiry = self._segment_expiry(stream, n)
            if expiry is None or expiry > now:
                break
            out.append(n)
        return out

    def enforce_retention(self, now: datetime, *, dry_run: bool = False) -> dict[str, list[int]]:
        removed: dict[str, list[int]] = {}
        if not dry_run:
            self._check_writable()
        with self._lock:
            for system_id, stream in self._streams.items():
                expired = self.expired_segments(system_id, now)
                if not expired or dry_run:
                    if expired:
                        removed[system_id] = expired
                    continue
                last_raw = _lines(stream.segment_path(expired[-1]).read_bytes())
                *_, (_, tail) = last_raw
                tail_event = parse_event(tail)
                anchor = ChainStreamState(system_id, tail_event.sequence_number, tail_event.current_hash)
                (stream.path / ANCHOR_FILE).write_text(
                    json.dumps({"last_sequence": anchor.last_sequence, "last_hash": anchor.last_hash}),
                    encoding="utf-8",
                )
                stream.anchor = anchor
                for n in expired:
                    for suffix in (EVENTS_SUFFIX, INDEX_SUFFIX, ENRICH_SUFFIX):
                        path = stream.segment_path(n, suffix)
                        handle = self._handles.pop(path, None)
                        if handle:
                            handle.close()
                        path.unlink(missing_ok=True)
                    stream.segments.remove(n)
                gone = [d for d, loc in self._by_decision.items() if loc.system_id == system_id and loc.segment in expired]
                for d in gone:
                    del self._by_decision[d]
                    self._enrichments.pop(d, None)
                stream.by_seq = {s: loc for s, loc in stream.by_seq.items() if loc.segment not in expired}
                removed[system_id] = expired
        return removed


def append_record(store: EventStore, event: DecisionEvent, system_id: str | None = None) -> Location:
    return store.append(event, system_id)


def scan_stream(store: EventStore, system_id: str, from_sequence: int = 1) -> Iterator[DecisionEvent]:
    return store.scan(system_id, from_sequence)


def lookup(store: EventStore, decision_id: str) -> DecisionEvent | None:
    return store.lookup(decision_id)
