import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import NOW, QUESTIONS
from tpaudit import cryptbox
from tpaudit.canon import decode_record
from tpaudit.errors import (
    AlreadyRegistered, InvalidIdentity, ParameterError, StaleKey, Unauthorized, UnknownClient, ZeroCase,
)
from tpaudit.keyforge import DeviceIdentity, NumericIdentity, PrimeConfig
from tpaudit.protocol import (
    CSP, Controller, LoginRequest, Recovery, RegistrationRecord, Rights, Status, VerificationOutcome,
    client_login,
)

ADMIN = "root-token"
printable = [chr(c) for c in range(32, 127)]


class Harness:
    def __init__(self, seed=0, p=7):
        self.cfg = PrimeConfig(p)
        self.kp = cryptbox.keygen(128, seed, created_at=NOW.epoch_minute // 1440)
        self.csp = CSP(ADMIN, self.cfg, random.Random(seed))
        self.log = []
        self.ctl = Controller(self.kp, self.csp, self.log.append, random.Random(seed + 1))

    def login(self, cid, ident, client_now, controller_now=None):
        req = client_login(cid, ident, client_now, self.ctl.public_key, cfg=self.cfg)
        return req, self.ctl.verify(req, controller_now or client_now)


@pytest.fixture
def h(identity):
    h = Harness()
    h.csp.register("alice", identity, QUESTIONS, NOW.epoch_minute)
    return h


def test_register_stores_three_salted_digests(h):
    rec = h.csp.records["alice"]
    assert len(rec.security_answers) == 3 and len(set(rec.salts)) == 3
    assert rec.access_rights is Rights.GRANTED
    assert b"rex" not in rec.to_line().encode()


def test_registration_record_round_trip(h):
    rec = h.csp.records["alice"]
    assert RegistrationRecord.from_line(rec.to_line()) == rec
    other = CSP(ADMIN)
    other.load(h.csp.dump())
    assert other.records == h.csp.records


@pytest.mark.parametrize("questions", [
    QUESTIONS[:2],
    QUESTIONS + [("x", "y")],
    [("a", "1"), ("a", "2"), ("b", "3")],
    [("a", "1"), ("b", " "), ("c", "3")],
    [("a", "1"), ("", "2"), ("c", "3")],
])
def test_register_rejects_bad_questions(identity, questions):
    with pytest.raises(ParameterError):
        CSP(ADMIN).register("bob", identity, questions, 0)


def test_register_duplicate(h, identity):
    with pytest.raises(AlreadyRegistered):
        h.csp.register("alice", identity, QUESTIONS, 0)


def test_register_zero_case():
    with pytest.raises(ZeroCase):
        CSP(ADMIN).register_numeric("z", NumericIdentity(1, 1, 0), QUESTIONS, 0)
    assert issubclass(ZeroCase, InvalidIdentity)


def test_honest_login_granted_with_token(h, identity):
    _, out = h.login("alice", identity, NOW)
    assert out.status is Status.GRANTED
    assert len(out.session_token) == 32
    assert h.ctl.sessions[out.session_token] == "alice"


def test_outcome_token_invariant():
    with pytest.raises(ParameterError):
        VerificationOutcome(Status.GRANTED, 0)
    with pytest.raises(ParameterError):
        VerificationOutcome(Status.MISMATCH, 0, b"x" * 32)


@pytest.mark.parametrize("skew", [0, -1])
def test_completeness_under_skew(h, identity, skew):
    _, out = h.login("alice", identity, NOW.shifted(skew), NOW)
    assert out.status is Status.GRANTED


@pytest.mark.parametrize("offset", range(2, 11))
def test_window_expiry(h, identity, offset):
    _, out = h.login("alice", identity, NOW.shifted(-offset), NOW)
    assert out.status is Status.EXPIRED


def test_future_stamp_mismatches(h, identity):
    # a client clock one minute ahead produces a value outside {now, now-1}
    _, out = h.login("alice", identity, NOW.shifted(1), NOW)
    assert out.status is Status.MISMATCH


def test_two_minutes_give_two_ciphertexts(h, identity):
    a = client_login("alice", identity, NOW, h.ctl.public_key)
    b = client_login("alice", identity, NOW.shifted(1), h.ctl.public_key)
    assert a.ciphertext != b.ciphertext


def test_client_digest_matches_csp_candidate(h, identity):
    req = client_login("alice", identity, NOW, h.ctl.public_key)
    cands = h.csp.generate_candidates("alice", NOW, h.kp.bits)
    assert len(cands) == 2
    assert cryptbox.decrypt(req.ciphertext, h.kp) == cands[0]


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(["motherboard_serial", "disk_serial", "password"]), st.data())
def test_soundness_single_character_mutation(field, data):
    h = Harness()
    ident = DeviceIdentity("MB-9X72Q", "WD-ZX81", "s3cret!")
    h.csp.register("alice", ident, QUESTIONS, 0)
    value = getattr(ident, field)
    pos = data.draw(st.integers(0, len(value) - 1))
    ch = data.draw(st.sampled_from([c for c in printable if c != value[pos]]))
    mutated = value[:pos] + ch + value[pos + 1:]
    fields = {"motherboard_serial": ident.motherboard_serial, "disk_serial": ident.disk_serial,
              "password": ident.password, field: mutated}
    _, out = h.login("alice", DeviceIdentity(**fields), NOW)
    assert out.status is Status.MISMATCH


def test_replay_rejected_then_cache_expires(h, identity):
    req, out = h.login("alice", identity, NOW)
    assert out.status is Status.GRANTED
    assert h.ctl.verify(req, NOW).status is Status.REPLAY
    assert h.ctl.verify(req, NOW.shifted(1)).status is Status.REPLAY
    # after two minutes the request itself is expired, so it never gets granted again
    assert h.ctl.verify(req, NOW.shifted(2)).status is Status.EXPIRED


def test_fresh_login_next_minute_is_not_replay(h, identity):
    assert h.login("alice", identity, NOW)[1].status is Status.GRANTED
    assert h.login("alice", identity, NOW.shifted(1))[1].status is Status.GRANTED


def test_unknown_client(h, identity):
    assert h.login("mallory", identity, NOW)[1].status is Status.UNKNOWN_CLIENT


def test_revoke_flow(h, identity):
    with pytest.raises(Unauthorized):
        h.csp.revoke_access("wrong", "alice")
    with pytest.raises(UnknownClient):
        h.csp.revoke_access(ADMIN, "nobody")
    h.csp.revoke_access(ADMIN, "alice")
    rec = h.csp.revoke_access(ADMIN, "alice")
    assert rec.access_rights is Rights.DENIED
    assert h.login("alice", identity, NOW)[1].status is Status.ACCESS_DENIED


def test_recovery(h):
    assert h.ctl.recover_password("alice", ["Rex", " oslo ", "st.  mary"], NOW) is Recovery.ACCEPTED
    assert h.ctl.recover_password("alice", ["rex", "paris", "st. mary"], NOW) is Recovery.REJECTED
    assert h.ctl.recover_password("alice", ["rex", "oslo"], NOW) is Recovery.REJECTED
    with pytest.raises(UnknownClient):
        h.ctl.recover_password("ghost", ["a", "b", "c"], NOW)
    details = [e.detail for e in h.log]
    assert details == ["recovery"] * 4


def test_password_reset_after_recovery(h, identity):
    new = DeviceIdentity(identity.motherboard_serial, identity.disk_serial, "n3w-pass")
    with pytest.raises(Unauthorized):
        h.csp.reset_identity("alice", new.numeric())
    h.ctl.recover_password("alice", ["rex", "oslo", "st. mary"], NOW)
    h.csp.reset_identity("alice", new.numeric())
    with pytest.raises(Unauthorized):
        h.csp.reset_identity("alice", new.numeric())
    assert h.login("alice", new, NOW)[1].status is Status.GRANTED
    assert h.login("alice", identity, NOW.shifted(1))[1].status is Status.MISMATCH


def test_stale_controller_key(identity):
    kp = cryptbox.keygen(128, 1, created_at=0, validity_days=90)
    with pytest.raises(StaleKey):
        client_login("alice", identity, NOW, kp.public, today=90)


def test_old_key_version_is_mismatch(h, identity):
    req = client_login("alice", identity, NOW, h.ctl.public_key)
    h.ctl.keypair = cryptbox.rotate(h.kp, 99, NOW.epoch_minute // 1440)
    assert h.ctl.verify(req, NOW).status is Status.MISMATCH


def test_timeout_logs_expired(h, identity):
    req = client_login("alice", identity, NOW, h.ctl.public_key)
    assert h.ctl.timeout(req, NOW).status is Status.EXPIRED
    assert h.log[-1].detail == "csp reply lost"


def test_every_attempt_logged_once(h, identity):
    rng = random.Random(5)
    attempts = 0
    for i in range(60):
        kind = rng.choice(["ok", "bad", "late", "ghost", "replay"])
        now = NOW.shifted(i * 3)
        if kind == "ok":
            h.login("alice", identity, now)
        elif kind == "bad":
            h.login("alice", DeviceIdentity("x", "y", "z"), now)
        elif kind == "late":
            h.login("alice", identity, now.shifted(-5), now)
        elif kind == "ghost":
            h.login("ghost", identity, now)
        else:
            req, _ = h.login("alice", identity, now)
            h.ctl.verify(req, now)
            attempts += 1
        attempts += 1
    assert len(h.log) == attempts
    for entry in h.log:
        rec = decode_record(entry.to_entry())
        assert rec["kind"] == "attempt" and rec["actor"] == "controller"


def test_login_request_record_round_trip(h, identity):
    req = client_login("alice", identity, NOW, h.ctl.public_key)
    assert LoginRequest.from_record(req.to_record()) == req
