import random
from itertools import combinations

import pytest
from hypothesis import given, settings, strategies as st

from integrity_fixtures import closed_form, detection_rate
from tpaudit.canon import decode_record, encode_record
from tpaudit.errors import EmptyFile, FileConflict, ParameterError, UnknownFile
from tpaudit.integrity import (
    Challenge, CloudStore, FileRecord, IntegrityAuditor, Verdict, chunk_and_checksum,
)
from tpaudit.canon import H
from tpaudit.ledger import Ledger, LedgerBlock, verify_chain


def make(block_size=4096, root=None, batch=8):
    return IntegrityAuditor(CloudStore(root), Ledger(batch), block_size)


def test_chunking_examples():
    blocks, whole = chunk_and_checksum(bytes(10_000), 4096)
    assert len(blocks) == 3
    assert whole == H(b"".join(blocks))
    assert len(chunk_and_checksum(bytes(4096), 4096)[0]) == 1
    assert chunk_and_checksum(b"abc", 2) == chunk_and_checksum(b"abc", 2)
    assert blocks[2] == H(bytes(10_000 - 8192))


def test_chunking_errors():
    with pytest.raises(EmptyFile):
        chunk_and_checksum(b"", 16)
    with pytest.raises(ParameterError):
        chunk_and_checksum(b"a", 0)


@given(st.binary(min_size=1, max_size=600), st.integers(1, 64), st.integers(0, 599), st.integers(1, 255))
def test_whole_checksum_changes_iff_a_block_changes(data, bs, pos, delta):
    pos %= len(data)
    mutated = bytearray(data)
    mutated[pos] ^= delta
    a, wa = chunk_and_checksum(data, bs)
    b, wb = chunk_and_checksum(bytes(mutated), bs)
    assert len(a) == -(-len(data) // bs)
    assert (a != b) and (wa != wb)
    assert [i for i in range(len(a)) if a[i] != b[i]] == [pos // bs]


def test_upload_and_clean_audit():
    aud = make()
    rec = aud.record_upload("doc", bytes(range(256)) * 40, "doc.txt", "alice", 10)
    assert rec.block_count == 3 and rec.uploaded_at == 10
    assert aud.upload_event("doc")["at"] == 10
    ch = aud.issue_challenge("doc", 3, seed=1, now=11)
    assert ch.block_indices == (0, 1, 2)
    v = aud.audit_verify(ch, 11)
    assert v.status is Verdict.PASS and v.failing_indices == () and v.duration_us >= 1
    with pytest.raises(FileConflict):
        aud.record_upload("doc", b"x", "doc.txt", "alice", 12)


def test_upload_event_is_queryable():
    aud = make()
    aud.record_upload("doc", b"hello", "doc.txt", "alice", 10)
    aud.ledger.flush(10)
    assert [decode_record(e)["kind"] for e in aud.ledger.query("alice")] == ["upload"]


def test_challenge_rules():
    aud = make(block_size=10)
    aud.record_upload("f", bytes(100), "f", "o", 0)
    assert aud.issue_challenge("f", 4, seed=9) == aud.issue_challenge("f", 4, seed=9)
    ch = aud.issue_challenge("f", 4, seed=9)
    assert list(ch.block_indices) == sorted(set(ch.block_indices))
    for bad in (0, 11):
        with pytest.raises(ParameterError):
            aud.issue_challenge("f", bad, seed=1)
    with pytest.raises(UnknownFile):
        aud.issue_challenge("nope", 1, seed=1)
    with pytest.raises(ParameterError):
        aud.audit_verify(Challenge("f", (10,), 0, "tpa"), 0)


def test_detection_exact_for_every_corrupt_index_and_challenge_set():
    n = 4
    for corrupt in range(n):
        for c in range(1, n + 1):
            for subset in combinations(range(n), c):
                aud = make(block_size=8)
                payload = bytes(range(32))
                aud.record_upload("f", payload, "f", "o", 0)
                data = bytearray(payload)
                data[corrupt * 8 + 3] ^= 1
                aud.store.write_payload("f", bytes(data))
                v = aud.audit_verify(Challenge("f", subset, 0, "tpa"), 0)
                if corrupt in subset:
                    assert v.status is Verdict.CHECKSUM_MISMATCH and v.failing_indices == (corrupt,)
                else:
                    assert v.status is Verdict.PASS and v.failing_indices == ()


def test_reaudit_catches_every_single_byte_corruption():
    payload = random.Random(3).randbytes(3 * 16 - 5)
    for pos in range(len(payload)):
        aud = make(block_size=16)
        aud.record_upload("f", payload, "f", "o", 0)
        data = bytearray(payload)
        data[pos] ^= 0x80
        aud.store.write_payload("f", bytes(data))
        v = aud.reaudit("f", 1)
        assert v.status is Verdict.CHECKSUM_MISMATCH and v.failing_indices == (pos // 16,)


def test_reaudit_is_logged_with_marker():
    aud = make()
    aud.record_upload("f", b"data", "f", "o", 0)
    assert aud.reaudit("f", 5).status is Verdict.PASS
    last = list(aud.ledger.records())[-1]
    assert last["kind"] == "reaudit" and last["indices"] == [0] and last["auditor"] == "controller"


def test_audit_entry_carries_duration():
    aud = make()
    aud.record_upload("f", bytes(9000), "f", "o", 0)
    aud.audit_verify(aud.issue_challenge("f", 2, 1, "tpa-7"), 3, duration_ms=12.5)
    rec = list(aud.ledger.records())[-1]
    assert rec["duration_us"] == 12_500 and rec["auditor"] == "tpa-7" and rec["block_count"] == 3


def test_descriptor_mismatch():
    aud = make()
    rec = aud.record_upload("f", b"payload", "f.txt", "alice", 0)
    renamed = FileRecord(rec.file_id, rec.descriptor.__class__("other.txt", rec.descriptor.size, "alice"),
                         rec.block_size, rec.block_checksums, rec.file_checksum, rec.uploaded_at)
    aud.store.write_record(renamed)
    assert aud.reaudit("f", 1).status is Verdict.DESCRIPTOR_MISMATCH


def test_truncated_payload_is_descriptor_mismatch():
    aud = make(block_size=4)
    aud.record_upload("f", b"12345678", "f", "o", 0)
    aud.store.write_payload("f", b"1234")
    assert aud.reaudit("f", 1).status is Verdict.DESCRIPTOR_MISMATCH


def test_missing_upload_event_is_descriptor_mismatch():
    aud = make()
    aud.record_upload("f", b"payload", "f", "o", 0)
    aud.ledger = Ledger()
    aud._upload_index.clear()
    assert aud.reaudit("f", 1).status is Verdict.DESCRIPTOR_MISMATCH


def test_ledger_timestamp_edit_is_detected():
    aud = make(batch=1)
    aud.record_upload("f", b"payload", "f", "alice", 100)
    block = aud.ledger.blocks[0]
    rec = decode_record(block.entries[0])
    rec["at"] = 99
    aud.ledger.blocks[0] = LedgerBlock(block.index, block.prev_hash, (encode_record(rec),),
                                       block.created_at, block.block_hash)
    v = aud.reaudit("f", 101)
    assert v.status is Verdict.TIMESTAMP_MISMATCH
    assert v.ledger_bad_block == 0
    assert verify_chain(aud.ledger) == 0


def test_directory_store(tmp_path):
    aud = make(root=tmp_path / "store", block_size=5)
    rec = aud.record_upload("f", b"hello world", "f", "o", 0)
    again = CloudStore(tmp_path / "store")
    assert again.record("f") == rec and again.payload("f") == b"hello world"
    assert again.file_ids() == ["f"]
    with pytest.raises(ParameterError):
        again.payload("../x")


@pytest.mark.parametrize("n,x,c", [(10, 1, 1), (10, 2, 3), (20, 5, 4)])
def test_detection_rate_matches_closed_form(n, x, c):
    assert abs(detection_rate(n, x, c, 3000, seed=n + x + c) - closed_form(n, x, c)) < 0.03
