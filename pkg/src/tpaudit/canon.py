"""Hash function and canonical byte encoding shared by every component.

Encoding grammar (all lengths and integers are ASCII decimal)::

    int    := "i" <decimal> ";"
    str    := "s" <utf-8 byte length> ":" <utf-8 bytes>
    bytes  := "b" <byte length> ":" <raw bytes>
    list   := "l" <item count> ":" item*
    record := "d" <pair count> ":" (str value)*

Records keep insertion order, so callers fix field order by construction.
Booleans are encoded as ints 0/1.
"""

from __future__ import annotations

import hashlib

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def H(data: bytes) -> bytes:
    """The one 256-bit hash used throughout (SHA-256)."""
    return hashlib.sha256(data).digest()


def encode(value) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value, out: bytearray) -> None:
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, int):
        out += b"i%d;" % value
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += b"s%d:" % len(raw)
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out += b"b%d:" % len(value)
        out += value
    elif isinstance(value, (list, tuple)):
        out += b"l%d:" % len(value)
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        out += b"d%d:" % len(value)
        for key, item in value.items():
            if not isinstance(key, str):
                raise TypeError(f"record keys must be str, got {key!r}")
            _encode_into(key, out)
            _encode_into(item, out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


class DecodeError(ValueError):
    pass


def decode(data: bytes):
    value, pos = _decode_at(data, 0)
    if pos != len(data):
        raise DecodeError(f"trailing bytes at offset {pos}")
    return value


def _read_number(data: bytes, pos: int, stop: bytes) -> tuple[int, int]:
    end = data.find(stop, pos)
    if end < 0:
        raise DecodeError(f"unterminated number at offset {pos}")
    text = data[pos:end]
    # reject "+1", " 1", "01" and friends so every value has one encoding
    if not text or not (text.isdigit() or (text[:1] == b"-" and text[1:].isdigit())):
        raise DecodeError(f"bad number {text!r} at offset {pos}")
    if (text.startswith(b"0") and len(text) > 1) or text.startswith(b"-0"):
        raise DecodeError(f"non-canonical number {text!r}")
    return int(text), end + 1


def _decode_at(data: bytes, pos: int):
    if pos >= len(data):
        raise DecodeError("unexpected end of input")
    tag = data[pos : pos + 1]
    pos += 1
    if tag == b"i":
        return _read_number(data, pos, b";")
    length, pos = _read_number(data, pos, b":")
    if length < 0:
        raise DecodeError("negative length")
    if tag in (b"s", b"b"):
        chunk = data[pos : pos + length]
        if len(chunk) != length:
            raise DecodeError("truncated payload")
        if tag == b"s":
            try:
                return chunk.decode("utf-8"), pos + length
            except UnicodeDecodeError as exc:
                raise DecodeError(str(exc)) from None
        return bytes(chunk), pos + length
    if tag == b"l":
        items = []
        for _ in range(length):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return items, pos
    if tag == b"d":
        record = {}
        for _ in range(length):
            key, pos = _decode_at(data, pos)
            if not isinstance(key, str) or key in record:
                raise DecodeError("bad record key")
            record[key], pos = _decode_at(data, pos)
        return record, pos
    raise DecodeError(f"unknown tag {tag!r} at offset {pos - 1}")


def encode_record(record: dict) -> str:
    """Serialize a record to the text form stored in ledger entries."""
    return encode(record).decode("utf-8")


def decode_record(text: str) -> dict:
    record = decode(text.encode("utf-8"))
    if not isinstance(record, dict):
        raise DecodeError("entry is not a record")
    return record
