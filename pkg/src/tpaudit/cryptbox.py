"""Textbook RSA with seeded key generation plus a hash-keystream payload layer.

There is no padding. Ciphertexts are deterministic, and 128-bit moduli are
far too small for real secrecy. See SECURITY.md.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .canon import H
from .errors import MessageTooLarge, ParameterError, StaleKey

DEFAULT_BITS = 128
DEFAULT_VALIDITY_DAYS = 90
MR_ROUNDS = 40
KEY_RECORD_FIELDS = (
    "version", "modulus", "public_exponent", "private_exponent",
    "created_at", "validity_days",
)
_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def is_probable_prime(n: int, rng: random.Random, rounds: int = MR_ROUNDS) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _gen_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so the product of two such primes has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if is_probable_prime(cand, rng):
            return cand


@dataclass(frozen=True)
class PublicKey:
    modulus: int
    public_exponent: int
    version: int = 1
    created_at: int = 0
    validity_days: int = DEFAULT_VALIDITY_DAYS

    @property
    def bits(self) -> int:
        return self.modulus.bit_length()


@dataclass(frozen=True)
class KeyPair:
    modulus: int
    public_exponent: int
    private_exponent: int
    created_at: int = 0
    validity_days: int = DEFAULT_VALIDITY_DAYS
    version: int = 1

    @property
    def bits(self) -> int:
        return self.modulus.bit_length()

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.modulus, self.public_exponent, self.version,
                         self.created_at, self.validity_days)

    def to_record(self) -> str:
        return "\n".join(f"{name}={getattr(self, name)}" for name in KEY_RECORD_FIELDS) + "\n"

    @classmethod
    def from_record(cls, text: str) -> KeyPair:
        lines = text.strip("\n").split("\n")
        names = [line.partition("=")[0] for line in lines]
        if tuple(names) != KEY_RECORD_FIELDS:
            raise ParameterError(f"key record fields out of order: {names}")
        values = {}
        for line in lines:
            name, _, raw = line.partition("=")
            if not raw.isdigit():
                raise ParameterError(f"key field {name} is not a decimal integer")
            values[name] = int(raw)
        return cls(**values)


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_version: int = 1


def keygen(bits: int = DEFAULT_BITS, seed: int = 0, created_at: int = 0,
           validity_days: int = DEFAULT_VALIDITY_DAYS, version: int = 1) -> KeyPair:
    """Deterministic RSA key pair for ``seed``; the modulus has exactly ``bits`` bits."""
    if bits < 32 or bits % 2:
        raise ParameterError("bits must be an even integer >= 32")
    rng = random.Random(seed)
    half = bits // 2
    p = _gen_prime(half, rng)
    q = _gen_prime(half, rng)
    while q == p:
        q = _gen_prime(half, rng)
    lam = math.lcm(p - 1, q - 1)
    e = 65537
    while math.gcd(e, lam) != 1:
        e += 2
    d = pow(e, -1, lam)
    return KeyPair(p * q, e, d, created_at, validity_days, version)


def rotate(kp: KeyPair, seed: int, today: int) -> KeyPair:
    return keygen(kp.bits, seed, created_at=today, validity_days=kp.validity_days,
                  version=kp.version + 1)


def encrypt(m: int, key: PublicKey | KeyPair) -> Ciphertext:
    if m < 0 or m >= key.modulus:
        raise MessageTooLarge(f"message must lie in [0, {key.modulus})")
    return Ciphertext(pow(m, key.public_exponent, key.modulus), key.version)


def decrypt(c: Ciphertext, kp: KeyPair) -> int:
    if c.key_version != kp.version:
        raise StaleKey(f"ciphertext key version {c.key_version} != {kp.version}")
    if not 0 <= c.value < kp.modulus:
        raise MessageTooLarge("ciphertext outside residue range")
    return pow(c.value, kp.private_exponent, kp.modulus)


def is_expired(kp: PublicKey | KeyPair, today: int) -> bool:
    return today >= kp.created_at + kp.validity_days


def message_digest(value: int, modulus_bits: int) -> int:
    """Hash an arbitrarily large integer into the encryptable range.

    The decimal form is hashed and the top ``modulus_bits - 8`` bits of the
    256-bit digest are kept (all 256 if the modulus is larger).
    """
    keep = min(256, modulus_bits - 8)
    return int.from_bytes(H(str(value).encode("ascii")), "big") >> (256 - keep)


SESSION_KEY_BYTES = 16


@dataclass(frozen=True)
class SessionKey:
    key: bytes

    def __post_init__(self):
        if len(self.key) != SESSION_KEY_BYTES:
            raise ParameterError("session key must be exactly 16 bytes")

    @classmethod
    def generate(cls, rng: random.Random) -> SessionKey:
        return cls(rng.randbytes(SESSION_KEY_BYTES))


def keystream(sk: SessionKey, length: int) -> bytes:
    blocks = (length + 31) // 32
    return b"".join(H(sk.key + i.to_bytes(8, "big")) for i in range(blocks))[:length]


def keystream_xor(payload: bytes, sk: SessionKey) -> bytes:
    """XOR ``payload`` with SHA-256(key || counter) blocks. Self-inverse."""
    n = len(payload)
    if n == 0:
        return b""
    stream = keystream(sk, n)
    return (int.from_bytes(payload, "big") ^ int.from_bytes(stream, "big")).to_bytes(n, "big")


def wrap_session_key(sk: SessionKey, key: PublicKey | KeyPair) -> list[Ciphertext]:
    """RSA-encrypt a session key in chunks small enough for the modulus."""
    chunk = max(1, (key.bits - 1) // 8)
    return [encrypt(int.from_bytes(sk.key[i : i + chunk], "big"), key)
            for i in range(0, SESSION_KEY_BYTES, chunk)]


def unwrap_session_key(parts: list[Ciphertext], kp: KeyPair) -> SessionKey:
    chunk = max(1, (kp.bits - 1) // 8)
    out = b""
    for i, part in enumerate(parts):
        size = min(chunk, SESSION_KEY_BYTES - i * chunk)
        out += decrypt(part, kp).to_bytes(size, "big")
    return SessionKey(out)
