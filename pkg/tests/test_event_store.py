from __future__ import annotations

import json
from datetime import datetime, timezone

import pytest

from des_ledger.canonical_crypto import compute_event_hash
from des_ledger.chain_integrity import ChainStreamState, build_checkpoint, seal_event
from des_ledger.enrichment import create_enrichment
from des_ledger.errors import DuplicateDecision, DuplicateSequence, RejectUnsealed, StaleEnrichment, StreamMismatch
from des_ledger.event_model import parse_event, serialize_event
from des_ledger.event_store import EventStore, append_record, lookup, scan_stream

from conftest import minimal_draft, sealed_chain


def fill(store, n, system_id="sys-a", start=0):
    chain = sealed_chain(n, system_id=system_id, start=start)
    for e in chain:
        store.append(e)
    return chain


def test_append_lookup_identical_bytes(store):
    [event] = fill(store, 1)
    assert store.lookup_raw(event.decision_id) == serialize_event(event)
    assert lookup(store, event.decision_id) == event
    assert store.lookup("00000000-0000-4000-8000-00000000ffff") is None
    assert store.stream_of(event.decision_id) == "sys-a"


def test_stored_bytes_rehash_to_current_hash(store):
    for event in fill(store, 5):
        stored = parse_event(store.lookup_raw(event.decision_id))
        assert compute_event_hash(stored).hex == event.current_hash


def test_duplicate_sequence_and_decision(store):
    chain = fill(store, 2)
    with pytest.raises(DuplicateSequence):
        store.append(chain[1])
    clash = seal_event(store.head("sys-a"), minimal_draft(0))
    with pytest.raises(DuplicateDecision):
        store.append(clash)


def test_rejects_unsealed_and_wrong_stream(store):
    with pytest.raises(RejectUnsealed):
        store.append(minimal_draft())
    [event] = sealed_chain(1)
    with pytest.raises(StreamMismatch):
        append_record(store, event, "other")


def test_scan_order_and_from_sequence(store):
    fill(store, 100)
    from des_ledger.chain_integrity import verify_chain

    events = list(scan_stream(store, "sys-a"))
    assert verify_chain(events).clean
    tail = list(store.scan("sys-a", 50))
    assert [e.sequence_number for e in tail] == list(range(50, 101))
    assert list(store.scan("nope")) == []
    assert store.count("sys-a") == 100


def test_segment_rollover(tmp_path):
    s = EventStore(tmp_path / "s", max_segment_bytes=2000, fsync=False)
    chain = fill(s, 30)
    files = sorted(p.name for p in (tmp_path / "s" / "sys-a").glob("*.events.ndjson"))
    assert len(files) > 3
    assert [e.sequence_number for e in s.scan("sys-a")] == list(range(1, 31))
    assert s.lookup(chain[0].decision_id) == chain[0]
    assert s.verify_stream("sys-a").clean
    s.close()
    reopened = EventStore(tmp_path / "s", max_segment_bytes=2000, fsync=False)
    assert reopened.lookup(chain[0].decision_id) == chain[0]
    assert reopened.head("sys-a").last_sequence == 30


def test_sidecar_index_written(store):
    fill(store, 3)
    idx = (store.root / "sys-a" / "000001.events.idx").read_text().splitlines()
    assert [json.loads(line)["sequence_number"] for line in idx] == [1, 2, 3]


def test_partial_tail_truncated_on_open(tmp_path):
    s = EventStore(tmp_path / "s", fsync=False)
    chain = fill(s, 5)
    s.close()
    seg = tmp_path / "s" / "sys-a" / "000001.events.ndjson"
    committed = seg.read_bytes()
    with seg.open("ab") as fh:
        fh.write(serialize_event(seal_event(ChainStreamState("sys-a", 5, chain[-1].current_hash), minimal_draft(5)))[:77])
    ro = EventStore(tmp_path / "s", read_only=True)
    report = ro.verify_stream("sys-a")
    assert report.clean and [w.kind for w in report.warnings] == ["partial_tail"]
    assert seg.read_bytes() != committed  # read-only open did not repair
    s2 = EventStore(tmp_path / "s", fsync=False)
    assert seg.read_bytes() == committed
    assert s2.count("sys-a") == 5 and s2.verify_stream("sys-a").clean
    fill_more = seal_event(s2.head("sys-a"), minimal_draft(5))
    s2.append(fill_more)
    assert s2.verify_stream("sys-a").clean


def test_failed_write_rolls_back(store, monkeypatch):
    fill(store, 2)
    seg = store.root / "sys-a" / "000001.events.ndjson"
    before = seg.read_bytes()
    nxt = seal_event(store.head("sys-a"), minimal_draft(2))

    def boom(handle, data):
        handle.write(data[: len(data) // 2])
        raise OSError("disk full")

    monkeypatch.setattr(store, "_write_all", boom)
    with pytest.raises(OSError):
        store.append(nxt)
    assert seg.read_bytes() == before
    assert store.head("sys-a").last_sequence == 2
    monkeypatch.undo()
    store.append(nxt)
    assert store.verify_stream("sys-a").clean


def test_read_only_refuses_writes(tmp_path):
    with pytest.raises(FileNotFoundError):
        EventStore(tmp_path / "missing", read_only=True)
    s = EventStore(tmp_path / "s", fsync=False)
    fill(s, 1)
    s.close()
    ro = EventStore(tmp_path / "s", read_only=True)
    with pytest.raises(PermissionError):
        ro.append(seal_event(ro.head("sys-a"), minimal_draft(1)))


def test_byte_flip_detected(store):
    fill(store, 10)
    seg = store.root / "sys-a" / "000001.events.ndjson"
    data = bytearray(seg.read_bytes())
    pos = data.index(b'"score":') + 8
    data[pos] = ord("9") if data[pos] != ord("9") else ord("8")
    seg.write_bytes(bytes(data))
    report = store.verify_stream("sys-a")
    assert [f.kind for f in report.findings] == ["hash_mismatch"]
    assert report.findings[0].index == 0


def test_non_canonical_line_detected(store):
    fill(store, 2)
    seg = store.root / "sys-a" / "000001.events.ndjson"
    first, second = seg.read_bytes().splitlines()
    pretty = json.dumps(json.loads(first), indent=None, separators=(", ", ": ")).encode()
    seg.write_bytes(pretty + b"\n" + second + b"\n")
    reopened = EventStore(store.root, fsync=False)
    assert "non_canonical" in {f.kind for f in reopened.verify_stream("sys-a").findings}


def test_enrichment_storage(store):
    [event] = fill(store, 1)
    seg = store.root / "sys-a" / "000001.events.ndjson"
    before = seg.read_bytes()
    record = create_enrichment(event, "ground_truth", {"actual": 1}, "2026-04-01T00:00:00.000Z")
    store.append_enrichment(record)
    assert store.enrichments(event.decision_id) == [record]
    assert seg.read_bytes() == before
    reopened = EventStore(store.root, fsync=False)
    assert reopened.enrichments(event.decision_id) == [record]
    other = sealed_chain(1, system_id="sys-b", start=50)[0]
    with pytest.raises(KeyError):
        store.append_enrichment(create_enrichment(other, "ground_truth", {}))
    stale = create_enrichment(other.replace("decision_context.decision_id", event.decision_id), "ground_truth", {})
    with pytest.raises(StaleEnrichment):
        store.append_enrichment(stale)


def test_checkpoints_persist_and_verify(store):
    chain = fill(store, 6)
    cp = build_checkpoint(chain[:4])
    store.append_checkpoint(cp)
    reopened = EventStore(store.root, fsync=False)
    assert reopened.checkpoints("sys-a") == [cp]
    assert reopened.verify_stream("sys-a").clean


def test_retention_removes_expired_closed_segments(tmp_path):
    s = EventStore(tmp_path / "s", max_segment_bytes=1500, fsync=False)
    state = ChainStreamState("sys-a")
    for i in range(20):
        draft = minimal_draft(i).replace("temporal_metadata.retention_policy", {"minimum_retention": "P6M"})
        event = seal_event(state, draft)
        s.append(event)
        state = state.advance(event)
    segments = sorted((tmp_path / "s" / "sys-a").glob("*.events.ndjson"))
    assert len(segments) >= 3
    early = datetime(2026, 6, 1, tzinfo=timezone.utc)
    assert s.enforce_retention(early) == {}
    late = datetime(2027, 1, 1, tzinfo=timezone.utc)
    planned = s.enforce_retention(late, dry_run=True)
    assert planned["sys-a"] == list(range(1, len(segments)))
    assert len(list((tmp_path / "s" / "sys-a").glob("*.events.ndjson"))) == len(segments)
    removed = s.enforce_retention(late)
    assert removed == planned
    kept = [e.sequence_number for e in s.scan("sys-a")]
    assert kept and kept[-1] == 20 and kept[0] > 1
    assert s.verify_stream("sys-a").clean
    assert EventStore(tmp_path / "s", fsync=False).verify_stream("sys-a").clean


def test_retention_never_without_policy(tmp_path):
    s = EventStore(tmp_path / "s", max_segment_bytes=1500, fsync=False)
    fill(s, 20)
    assert s.enforce_retention(datetime(2100, 1, 1, tzinfo=timezone.utc)) == {}


def test_streams_are_independent(store):
    fill(store, 3, "sys-a")
    fill(store, 2, "sys/b", start=100)
    assert store.streams() == ["sys-a", "sys/b"]
    assert store.head("sys/b").last_sequence == 2
    assert (store.root / "sys%2Fb").is_dir()
