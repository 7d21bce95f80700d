"""Append-only, hash-chained audit ledger.

Entries are canonical record strings (see :mod:`tpaudit.canon`). They are
buffered and sealed into blocks of ``batch_size``. Each block commits to its
predecessor's hash, so editing any sealed block breaks verification from
that block onward.

On disk the chain is one JSON object per line, keys in the order
``index, prev_hash, entries, created_at, block_hash``, compact separators,
ASCII only, digests lowercase hex, and every line ends in ``\\n``. Loading is
strict: a line that does not re-serialize to exactly the same bytes is
treated as a corrupt block.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .canon import H, ZERO_DIGEST, DecodeError, decode_record, encode
from .errors import ChainInvalid, ParameterError

DEFAULT_BATCH_SIZE = 8


@dataclass(frozen=True)
class LedgerBlock:
    index: int
    prev_hash: bytes
    entries: tuple[str, ...]
    created_at: int
    block_hash: bytes

    def to_line(self) -> str:
        obj = {
            "index": self.index,
            "prev_hash": self.prev_hash.hex(),
            "entries": list(self.entries),
            "created_at": self.created_at,
            "block_hash": self.block_hash.hex(),
        }
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=True) + "\n"


def block_digest(index: int, prev_hash: bytes, entries: Iterable[str], created_at: int) -> bytes:
    return H(encode([index, prev_hash, list(entries), created_at]))


def seal_block(index: int, prev_hash: bytes, entries: Iterable[str], created_at: int) -> LedgerBlock:
    entries = tuple(entries)
    return LedgerBlock(index, prev_hash, entries, created_at,
                       block_digest(index, prev_hash, entries, created_at))


def verify_chain(blocks) -> int | None:
    """Return ``None`` for a valid chain, else the lowest bad block index.

    Accepts a :class:`Ledger` or any sequence of blocks; a ``None`` element
    stands for a block that could not be parsed.
    """
    if isinstance(blocks, Ledger):
        blocks = blocks.blocks
    return _first_bad(blocks, 0)


def _first_bad(blocks, start: int) -> int | None:
    prev = blocks[start - 1].block_hash if start else ZERO_DIGEST
    for i in range(start, len(blocks)):
        block = blocks[i]
        if block is None or block.index != i or block.prev_hash != prev:
            return i
        try:
            digest = block_digest(block.index, block.prev_hash, block.entries, block.created_at)
        except (TypeError, ValueError):
            return i
        if digest != block.block_hash:
            return i
        prev = block.block_hash
    return None


def parse_line(line: str) -> LedgerBlock | None:
    """Parse one persisted block; ``None`` if it is not byte-canonical."""
    try:
        obj = json.loads(line)
        block = LedgerBlock(
            index=obj["index"],
            prev_hash=bytes.fromhex(obj["prev_hash"]),
            entries=tuple(obj["entries"]),
            created_at=obj["created_at"],
            block_hash=bytes.fromhex(obj["block_hash"]),
        )
        if (type(block.index) is not int or type(block.created_at) is not int
                or not all(isinstance(e, str) for e in block.entries)):
            return None
        if block.to_line() != line + "\n":
            return None
    except (ValueError, KeyError, TypeError, AttributeError):
        return None
    return block


def load_blocks(data: bytes) -> list[LedgerBlock | None]:
    """Split persisted bytes into blocks; unparsable lines come back as ``None``."""
    if not data:
        return []
    text = data.decode("utf-8", errors="replace")
    lines = text.split("\n")
    terminated = lines[-1] == ""
    if terminated:
        lines.pop()
    blocks = [parse_line(line) for line in lines]
    if not terminated:
        blocks[-1] = None
    return blocks


def verify_file(path: str | os.PathLike) -> int | None:
    p = Path(path)
    if not p.exists():
        return None
    return verify_chain(load_blocks(p.read_bytes()))


class Ledger:
    """Single-writer hash chain with a pending-entry buffer."""

    def __init__(self, batch_size: int = DEFAULT_BATCH_SIZE, blocks: list[LedgerBlock] | None = None):
        if batch_size < 1:
            raise ParameterError("batch_size must be positive")
        self.batch_size = batch_size
        self.blocks: list[LedgerBlock] = list(blocks or [])
        self.pending: list[str] = []
        self._trusted: list[LedgerBlock] = []
        self._lock = threading.Lock()

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else ZERO_DIGEST

    def append(self, entry: str, now: int) -> LedgerBlock | None:
        """Buffer ``entry``; seal and return a block once the buffer is full."""
        if not isinstance(entry, str):
            raise TypeError("ledger entries are canonical record strings")
        with self._lock:
            self._check()
            self.pending.append(entry)
            if len(self.pending) >= self.batch_size:
                return self._seal(now)
        return None

    def flush(self, now: int) -> LedgerBlock | None:
        with self._lock:
            if not self.pending:
                return None
            self._check()
            return self._seal(now)

    def _check(self) -> None:
        """Raise unless the chain verifies.

        Blocks are immutable, so a prefix whose objects are the very ones
        verified last time is skipped; anything after it is rehashed.
        """
        n = 0
        for have, seen in zip(self.blocks, self._trusted):
            if have is not seen:
                break
            n += 1
        bad = _first_bad(self.blocks, n)
        if bad is not None:
            self._trusted = self.blocks[:bad]
            raise ChainInvalid(bad)
        self._trusted = list(self.blocks)

    def _seal(self, now: int) -> LedgerBlock:
        block = seal_block(len(self.blocks), self.head_hash, self.pending, now)
        self.blocks.append(block)
        self._trusted.append(block)
        self.pending = []
        return block

    def iter_entries(self, include_pending: bool = True) -> Iterator[str]:
        """All entries in append order, without verifying the chain."""
        for block in self.blocks:
            if block is not None:
                yield from block.entries
        if include_pending:
            yield from list(self.pending)

    def records(self, include_pending: bool = True) -> Iterator[dict]:
        for entry in self.iter_entries(include_pending):
            try:
                yield decode_record(entry)
            except DecodeError:
                continue

    def query(self, client_id: str | None = None, start: int | None = None,
              end: int | None = None) -> list[str]:
        """Entries for ``client_id`` with ``start <= at <= end``, in append order."""
        with self._lock:
            self._check()
        out = []
        for entry in self.iter_entries():
            rec = decode_record(entry)
            if client_id is not None and rec.get("client_id") != client_id:
                continue
            at = rec.get("at")
            if start is not None and (at is None or at < start):
                continue
            if end is not None and (at is None or at > end):
                continue
            out.append(entry)
        return out

    def serialize(self) -> bytes:
        return "".join(block.to_line() for block in self.blocks).encode("ascii")

    def save(self, path: str | os.PathLike) -> None:
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(self.serialize())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike, batch_size: int = DEFAULT_BATCH_SIZE,
             strict: bool = True) -> Ledger:
        """Read a persisted chain.

        With ``strict=False`` a corrupt chain is loaded anyway (unparsable
        blocks become ``None``); reads work but every append is refused.
        """
        p = Path(path)
        blocks = load_blocks(p.read_bytes()) if p.exists() else []
        bad = verify_chain(blocks)
        if bad is not None and strict:
            raise ChainInvalid(bad)
        return cls(batch_size, blocks)
