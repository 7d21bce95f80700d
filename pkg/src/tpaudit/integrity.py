"""Checksum-based file integrity auditing.

Payloads are split into fixed-size blocks (the last one unpadded) and each
block gets a SHA-256 checksum. The whole-file checksum is the hash of the
concatenated block checksums. An auditor challenges a random subset of
blocks. The stored payload is re-hashed at those indices and compared to the
recorded checksums. The upload event in the ledger is the reference for
the file's descriptor and upload timestamp.
"""

from __future__ import annotations

import enum
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .canon import DecodeError, H, decode_record, encode_record
from .errors import ChainInvalid, EmptyFile, FileConflict, ParameterError, UnknownFile
from .ledger import Ledger

DEFAULT_BLOCK_SIZE = 4096


@dataclass(frozen=True)
class Descriptor:
    name: str
    size: int
    owner: str


@dataclass(frozen=True)
class FileRecord:
    file_id: str
    descriptor: Descriptor
    block_size: int
    block_checksums: tuple[bytes, ...]
    file_checksum: bytes
    uploaded_at: int

    @property
    def block_count(self) -> int:
        return len(self.block_checksums)

    def to_json(self) -> str:
        return json.dumps({
            "file_id": self.file_id,
            "name": self.descriptor.name,
            "size": self.descriptor.size,
            "owner": self.descriptor.owner,
            "block_size": self.block_size,
            "block_checksums": [c.hex() for c in self.block_checksums],
            "file_checksum": self.file_checksum.hex(),
            "uploaded_at": self.uploaded_at,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> FileRecord:
        obj = json.loads(text)
        return cls(
            obj["file_id"],
            Descriptor(obj["name"], obj["size"], obj["owner"]),
            obj["block_size"],
            tuple(bytes.fromhex(c) for c in obj["block_checksums"]),
            bytes.fromhex(obj["file_checksum"]),
            obj["uploaded_at"],
        )


@dataclass(frozen=True)
class Challenge:
    file_id: str
    block_indices: tuple[int, ...]
    issued_at: int
    challenger: str


class Verdict(str, enum.Enum):
    PASS = "pass"
    CHECKSUM_MISMATCH = "checksum_mismatch"
    DESCRIPTOR_MISMATCH = "descriptor_mismatch"
    TIMESTAMP_MISMATCH = "timestamp_mismatch"


@dataclass(frozen=True)
class AuditVerdict:
    status: Verdict
    failing_indices: tuple[int, ...] = ()
    duration_us: int = 0
    # set when the ledger refused the verdict entry because its chain is corrupt
    ledger_bad_block: int | None = None


def chunk_and_checksum(payload: bytes, block_size: int = DEFAULT_BLOCK_SIZE) -> tuple[tuple[bytes, ...], bytes]:
    """Per-block checksums and the whole-file checksum."""
    if not payload:
        raise EmptyFile("payload is empty")
    if block_size <= 0:
        raise ParameterError("block_size must be positive")
    blocks = tuple(H(payload[i : i + block_size]) for i in range(0, len(payload), block_size))
    return blocks, H(b"".join(blocks))


class CloudStore:
    """Simulated CSP storage: payload plus metadata per file.

    With ``root`` set, payloads live at ``root/<id>.bin`` and metadata at
    ``root/<id>.json``; otherwise everything stays in memory.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._payloads: dict[str, bytes] = {}
        self._records: dict[str, FileRecord] = {}
        self._lock = threading.Lock()

    def _path(self, file_id: str, suffix: str) -> Path:
        if not file_id or "/" in file_id or "\\" in file_id or file_id.startswith("."):
            raise ParameterError(f"invalid file id {file_id!r}")
        return self.root / f"{file_id}{suffix}"

    def __contains__(self, file_id: str) -> bool:
        if self.root is None:
            return file_id in self._records
        return self._path(file_id, ".json").exists()

    def put(self, record: FileRecord, payload: bytes) -> None:
        with self._lock:
            if record.file_id in self:
                raise FileConflict(record.file_id)
            self.write_payload(record.file_id, payload)
            self.write_record(record)

    def write_payload(self, file_id: str, payload: bytes) -> None:
        if self.root is None:
            self._payloads[file_id] = bytes(payload)
        else:
            self._path(file_id, ".bin").write_bytes(payload)

    def write_record(self, record: FileRecord) -> None:
        if self.root is None:
            self._records[record.file_id] = record
        else:
            self._path(record.file_id, ".json").write_text(record.to_json() + "\n")

    def payload(self, file_id: str) -> bytes:
        if file_id not in self:
            raise UnknownFile(file_id)
        if self.root is None:
            return self._payloads[file_id]
        return self._path(file_id, ".bin").read_bytes()

    def record(self, file_id: str) -> FileRecord:
        if file_id not in self:
            raise UnknownFile(file_id)
        if self.root is None:
            return self._records[file_id]
        return FileRecord.from_json(self._path(file_id, ".json").read_text())

    def file_ids(self) -> list[str]:
        if self.root is None:
            return sorted(self._records)
        return sorted(p.stem for p in self.root.glob("*.json"))


@dataclass
class IntegrityAuditor:
    """Upload bookkeeping and challenge/response audits against a store."""

    store: CloudStore
    ledger: Ledger
    block_size: int = DEFAULT_BLOCK_SIZE
    # file_id -> (block index, block object, upload record); valid while that block is unchanged
    _upload_index: dict = field(default_factory=dict, repr=False)

    def record_upload(self, file_id: str, payload: bytes, name: str, owner: str, now: int) -> FileRecord:
        blocks, whole = chunk_and_checksum(payload, self.block_size)
        record = FileRecord(file_id, Descriptor(name, len(payload), owner),
                            self.block_size, blocks, whole, now)
        self.store.put(record, payload)
        self.ledger.append(encode_record({
            "kind": "upload", "client_id": owner, "at": now, "file_id": file_id,
            "name": name, "size": len(payload), "owner": owner,
            "file_checksum": whole.hex(), "block_count": len(blocks),
        }), now)
        return record

    def issue_challenge(self, file_id: str, count: int, seed: int, challenger: str = "tpa",
                        now: int = 0) -> Challenge:
        n = self.store.record(file_id).block_count
        if not 1 <= count <= n:
            raise ParameterError(f"challenge size must be in [1, {n}]")
        indices = sorted(random.Random(seed).sample(range(n), count))
        return Challenge(file_id, tuple(indices), now, challenger)

    def upload_event(self, file_id: str) -> dict | None:
        """Latest upload record for ``file_id``, read without chain verification."""
        blocks = self.ledger.blocks
        hit = self._upload_index.get(file_id)
        if hit is not None and hit[0] < len(blocks) and blocks[hit[0]] is hit[1]:
            return hit[2]
        found = None
        kind_tag = encode_record({"kind": "upload"})[3:]
        id_tag = encode_record({"file_id": file_id})[3:]
        sources = [(i, b.entries) for i, b in enumerate(blocks) if b is not None]
        sources.append((None, tuple(self.ledger.pending)))
        for where, entries in sources:
            for entry in entries:
                # cheap substring screen before the full decode
                if kind_tag not in entry or id_tag not in entry:
                    continue
                try:
                    rec = decode_record(entry)
                except DecodeError:
                    continue
                if rec.get("kind") == "upload" and rec.get("file_id") == file_id:
                    found = (where, rec)
        if found is None:
            return None
        if found[0] is not None:
            self._upload_index[file_id] = (found[0], blocks[found[0]], found[1])
        return found[1]

    def audit_verify(self, ch: Challenge, now: int, duration_ms: float | None = None,
                     reaudit: bool = False) -> AuditVerdict:
        """Check the challenged blocks plus descriptor and timestamp.

        ``duration_ms`` overrides the wall-clock measurement (simulated runs).
        The verdict is appended to the ledger with the duration attached.
        """
        started = time.perf_counter()
        record = self.store.record(ch.file_id)
        payload = self.store.payload(ch.file_id)
        event = self.upload_event(ch.file_id)
        if any(not 0 <= i < record.block_count for i in ch.block_indices) or not ch.block_indices:
            raise ParameterError("challenge indices out of range")

        failing = []
        status = Verdict.PASS
        if (event is None or len(payload) != record.descriptor.size
                or (event["name"], event["size"], event["owner"]) != (
                    record.descriptor.name, record.descriptor.size, record.descriptor.owner)):
            status = Verdict.DESCRIPTOR_MISMATCH
        elif event["at"] != record.uploaded_at:
            status = Verdict.TIMESTAMP_MISMATCH
        else:
            bs = record.block_size
            failing = [i for i in ch.block_indices
                       if H(payload[i * bs : (i + 1) * bs]) != record.block_checksums[i]]
            if failing:
                status = Verdict.CHECKSUM_MISMATCH

        if duration_ms is None:
            duration_ms = (time.perf_counter() - started) * 1000.0
        duration_us = max(1, round(duration_ms * 1000))
        entry = encode_record({
            "kind": "reaudit" if reaudit else "audit",
            "client_id": record.descriptor.owner, "at": now, "file_id": ch.file_id,
            "auditor": ch.challenger, "status": status.value,
            "indices": list(ch.block_indices), "failing": failing,
            "block_count": record.block_count, "duration_us": duration_us,
        })
        try:
            self.ledger.append(entry, now)
        except ChainInvalid as exc:
            return AuditVerdict(status, tuple(failing), duration_us, exc.index)
        return AuditVerdict(status, tuple(failing), duration_us)

    def reaudit(self, file_id: str, now: int, challenger: str = "controller",
                duration_ms: float | None = None) -> AuditVerdict:
        n = self.store.record(file_id).block_count
        ch = Challenge(file_id, tuple(range(n)), now, challenger)
        return self.audit_verify(ch, now, duration_ms, reaudit=True)
