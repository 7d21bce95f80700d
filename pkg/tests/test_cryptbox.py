import math
import random
import time

import pytest
from hypothesis import given, settings, strategies as st

from tpaudit import cryptbox
from tpaudit.cryptbox import (
    Ciphertext, KeyPair, SessionKey, decrypt, encrypt, is_expired, is_probable_prime, keygen,
    keystream_xor, message_digest, rotate, unwrap_session_key, wrap_session_key,
)
from tpaudit.errors import MessageTooLarge, ParameterError, StaleKey

TOY = KeyPair(3233, 17, 413)


def test_toy_pair_examples():
    assert encrypt(65, TOY).value == 2790
    assert decrypt(Ciphertext(2790), TOY) == 65


def test_toy_modulus_is_a_bijection():
    images = [encrypt(m, TOY).value for m in range(3233)]
    assert sorted(images) == list(range(3233))
    assert all(decrypt(Ciphertext(c), TOY) == m for m, c in enumerate(images))


def test_fixed_points():
    kp = keygen(64, seed=3)
    assert encrypt(0, kp).value == 0
    assert encrypt(1, kp).value == 1
    assert encrypt(kp.modulus - 1, kp).value == kp.modulus - 1


@pytest.mark.parametrize("bits", [32, 64, 128])
def test_round_trip_1000_messages(bits):
    kp = keygen(bits, seed=7)
    rng = random.Random(bits)
    for _ in range(1000):
        m = rng.randrange(kp.modulus)
        assert decrypt(encrypt(m, kp), kp) == m


@pytest.mark.parametrize("bits", [32, 64, 128, 256])
def test_key_invariants(bits):
    kp = keygen(bits, seed=bits)
    assert kp.modulus.bit_length() == bits
    # e*d - 1 is a multiple of lcm(p-1, q-1), so a^(e*d-1) == 1 for every unit a
    rng = random.Random(bits)
    for _ in range(20):
        a = rng.randrange(2, kp.modulus)
        if math.gcd(a, kp.modulus) == 1:
            assert pow(a, kp.public_exponent * kp.private_exponent - 1, kp.modulus) == 1


def test_keygen_deterministic_and_distinct():
    assert keygen(32, seed=1) == keygen(32, seed=1)
    moduli = {keygen(64, seed=s).modulus for s in range(100)}
    assert len(moduli) == 100


@pytest.mark.parametrize("bits", [0, 16, 31, 33, 65])
def test_keygen_rejects_bad_sizes(bits):
    with pytest.raises(ParameterError):
        keygen(bits)


def test_message_bounds():
    with pytest.raises(MessageTooLarge):
        encrypt(TOY.modulus, TOY)
    with pytest.raises(MessageTooLarge):
        encrypt(-1, TOY)


def test_stale_version():
    kp = keygen(64, seed=1)
    new = rotate(kp, seed=2, today=90)
    assert new.version == 2 and new.created_at == 90
    with pytest.raises(StaleKey):
        decrypt(encrypt(42, kp), new)


def test_expiry_boundaries():
    kp = keygen(32, seed=1, created_at=0, validity_days=90)
    assert not is_expired(kp, 89)
    assert is_expired(kp, 90)
    assert keygen(32, seed=1).validity_days == 90


def test_key_record_round_trip():
    kp = keygen(128, seed=9, created_at=20_000, version=3)
    text = kp.to_record()
    names = [line.split("=")[0] for line in text.strip().splitlines()]
    assert names == ["version", "modulus", "public_exponent", "private_exponent", "created_at", "validity_days"]
    assert KeyPair.from_record(text) == kp


def test_primality_against_trial_division():
    rng = random.Random(0)
    small = [n for n in range(2, 3000) if all(n % d for d in range(2, int(n**0.5) + 1))]
    assert [n for n in range(3000) if is_probable_prime(n, rng)] == small
    # Carmichael numbers fool Fermat but not Miller-Rabin
    for n in (561, 1105, 1729, 2465, 2821, 6601, 8911):
        assert not is_probable_prime(n, rng)


def test_message_digest_fits_modulus():
    for bits in (32, 64, 128):
        kp = keygen(bits, seed=1)
        for v in (0, 1, 10**200):
            d = message_digest(v, bits)
            assert 0 <= d < kp.modulus
            assert d.bit_length() <= bits - 8
    assert message_digest(5, 128) != message_digest(6, 128)


@given(st.binary(max_size=2000), st.binary(min_size=16, max_size=16))
def test_keystream_is_an_involution(data, key):
    sk = SessionKey(key)
    out = keystream_xor(data, sk)
    assert len(out) == len(data)
    assert keystream_xor(out, sk) == data


def test_keystream_empty_and_key_length():
    assert keystream_xor(b"", SessionKey(bytes(16))) == b""
    with pytest.raises(ParameterError):
        SessionKey(b"short")


def test_keystream_differs_by_key():
    data = bytes(64)
    assert keystream_xor(data, SessionKey(bytes(16))) != keystream_xor(data, SessionKey(b"\x01" * 16))


@settings(max_examples=30)
@given(st.sampled_from([32, 64, 128]), st.integers(0, 2**32))
def test_session_key_wrap_round_trip(bits, seed):
    kp = keygen(bits, seed=seed % 50)
    sk = SessionKey.generate(random.Random(seed))
    assert unwrap_session_key(wrap_session_key(sk, kp.public), kp) == sk


def test_500kb_encrypts_quickly():
    sk = SessionKey.generate(random.Random(1))
    payload = random.Random(2).randbytes(500_000)
    best = min(_timed(keystream_xor, payload, sk) for _ in range(3))
    assert best < 0.40


def _timed(fn, *args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def test_public_key_cannot_decrypt():
    kp = keygen(64, seed=5)
    assert not hasattr(kp.public, "private_exponent")
    assert cryptbox.encrypt(7, kp.public) == cryptbox.encrypt(7, kp)
