"""Client, automated controller and CSP for registration and login.

The controller owns the RSA key pair. A client hashes its current time case
into the encryptable range (:func:`cryptbox.message_digest`) and encrypts it
under the controller's public key. The CSP keeps each client's numeric
identity, recomputes the digests for the current and previous minute, and
returns them encrypted under the same key. The controller decrypts both
sides and compares plaintext digests, so one minute of clock skew does not
cause a spurious mismatch. Every login and recovery attempt is logged.

Actors are plain objects that process one call at a time under a per-actor
lock. Tests and the simulator drive them single-threaded.
"""

from __future__ import annotations

import enum
import hmac
import json
import random
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

from . import cryptbox, keyforge
from .canon import H, encode_record
from .cryptbox import Ciphertext, KeyPair, PublicKey
from .errors import (
    AccessDenied, AlreadyRegistered, InvalidIdentity, ParameterError, StaleKey,
    Unauthorized, UnknownClient, ZeroCase,
)
from .keyforge import DeviceIdentity, MinuteStamp, NumericIdentity, PrimeConfig

SECURITY_QUESTIONS = 3
REPLAY_RETENTION_MINUTES = 2


class Status(str, enum.Enum):
    GRANTED = "granted"
    MISMATCH = "mismatch"
    EXPIRED = "expired"
    ACCESS_DENIED = "access_denied"
    UNKNOWN_CLIENT = "unknown_client"
    REPLAY = "replay"


class Rights(str, enum.Enum):
    GRANTED = "granted"
    DENIED = "denied"


class Recovery(str, enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class Actor(str, enum.Enum):
    CLIENT = "client"
    CONTROLLER = "controller"
    CSP = "csp"


def _normalize_answer(answer: str) -> str:
    return " ".join(answer.split()).casefold()


def answer_digest(salt: bytes, answer: str) -> bytes:
    return H(salt + _normalize_answer(answer).encode("utf-8"))


@dataclass(frozen=True)
class RegistrationRecord:
    client_id: str
    numeric_identity: NumericIdentity
    questions: tuple[str, ...]
    salts: tuple[bytes, ...]
    security_answers: tuple[bytes, ...]
    access_rights: Rights
    registered_at: int

    def __post_init__(self):
        if not (len(self.questions) == len(self.salts) == len(self.security_answers) == SECURITY_QUESTIONS):
            raise ParameterError("exactly 3 security questions are required")

    def to_line(self) -> str:
        ni = self.numeric_identity
        obj = {
            "client_id": self.client_id,
            "moboard_num": str(ni.moboard_num),
            "disk_no": str(ni.disk_no),
            "pwd_num": str(ni.pwd_num),
            "questions": list(self.questions),
            "salts": [s.hex() for s in self.salts],
            "security_answers": [d.hex() for d in self.security_answers],
            "access_rights": self.access_rights.value,
            "registered_at": self.registered_at,
        }
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_line(cls, line: str) -> RegistrationRecord:
        obj = json.loads(line)
        return cls(
            client_id=obj["client_id"],
            numeric_identity=NumericIdentity(int(obj["moboard_num"]), int(obj["disk_no"]), int(obj["pwd_num"])),
            questions=tuple(obj["questions"]),
            salts=tuple(bytes.fromhex(s) for s in obj["salts"]),
            security_answers=tuple(bytes.fromhex(d) for d in obj["security_answers"]),
            access_rights=Rights(obj["access_rights"]),
            registered_at=obj["registered_at"],
        )


@dataclass(frozen=True)
class LoginRequest:
    client_id: str
    ciphertext: Ciphertext
    sent_at: int

    def to_record(self) -> dict:
        return {"client_id": self.client_id, "ciphertext": str(self.ciphertext.value),
                "key_version": self.ciphertext.key_version, "sent_at": self.sent_at}

    @classmethod
    def from_record(cls, rec: dict) -> LoginRequest:
        return cls(rec["client_id"], Ciphertext(int(rec["ciphertext"]), rec["key_version"]), rec["sent_at"])


@dataclass(frozen=True)
class CandidateReply:
    """CSP answer to the controller: encrypted candidate digests or a refusal."""

    client_id: str
    candidates: tuple[Ciphertext, ...] = ()
    refusal: Status | None = None


@dataclass(frozen=True)
class VerificationOutcome:
    status: Status
    decided_at: int
    session_token: bytes | None = None

    def __post_init__(self):
        if (self.session_token is not None) != (self.status is Status.GRANTED):
            raise ParameterError("session_token is present iff status is granted")


@dataclass(frozen=True)
class AttemptLogEntry:
    client_id: str
    status: str
    at: int
    actor: Actor
    detail: str = ""

    def to_entry(self) -> str:
        return encode_record({
            "kind": "attempt", "client_id": self.client_id, "at": self.at,
            "status": self.status, "actor": self.actor.value, "detail": self.detail,
        })


def client_login(client_id: str, identity: DeviceIdentity, now: MinuteStamp,
                 controller_key: PublicKey, today: int | None = None,
                 cfg: PrimeConfig = PrimeConfig()) -> LoginRequest:
    """Build the encrypted login request a client sends at ``now``."""
    if today is None:
        today = now.epoch_minute // 1440
    if cryptbox.is_expired(controller_key, today):
        raise StaleKey("controller key has expired")
    case = keyforge.compute_case(identity.numeric())
    tc = keyforge.time_case(case, now, cfg)
    digest = cryptbox.message_digest(tc.value, controller_key.bits)
    return LoginRequest(client_id, cryptbox.encrypt(digest, controller_key), now.epoch_minute)


class CSP:
    """Registration store and candidate generator."""

    def __init__(self, admin_token: str, cfg: PrimeConfig = PrimeConfig(),
                 rng: random.Random | None = None):
        self.cfg = cfg
        self._admin_token = admin_token
        self._rng = rng if rng is not None else random.Random()
        self.records: dict[str, RegistrationRecord] = {}
        self.recovery_open: set[str] = set()
        self._lock = threading.Lock()

    def register(self, client_id: str, identity: DeviceIdentity,
                 questions: list[tuple[str, str]], now: int) -> RegistrationRecord:
        return self.register_numeric(client_id, identity.numeric(), questions, now)

    def register_numeric(self, client_id: str, numeric: NumericIdentity,
                         questions: list[tuple[str, str]], now: int) -> RegistrationRecord:
        if not client_id:
            raise InvalidIdentity("client_id must be non-empty")
        if len(questions) != SECURITY_QUESTIONS:
            raise ParameterError("exactly 3 security questions are required")
        texts = [q for q, _ in questions]
        if len(set(texts)) != SECURITY_QUESTIONS or not all(q.strip() for q in texts):
            raise ParameterError("security questions must be distinct and non-empty")
        if not all(a.strip() for _, a in questions):
            raise ParameterError("security answers must be non-empty")
        if keyforge.compute_case(numeric).value == 0:
            raise ZeroCase("identity yields a zero case value")
        with self._lock:
            if client_id in self.records:
                raise AlreadyRegistered(client_id)
            salts = tuple(self._rng.randbytes(16) for _ in questions)
            record = RegistrationRecord(
                client_id=client_id,
                numeric_identity=numeric,
                questions=tuple(texts),
                salts=salts,
                security_answers=tuple(answer_digest(s, a) for s, (_, a) in zip(salts, questions)),
                access_rights=Rights.GRANTED,
                registered_at=now,
            )
            self.records[client_id] = record
        return record

    def generate_candidates(self, client_id: str, now: MinuteStamp, modulus_bits: int) -> list[int]:
        record = self.records.get(client_id)
        if record is None:
            raise UnknownClient(client_id)
        if record.access_rights is not Rights.GRANTED:
            raise AccessDenied(client_id)
        case = keyforge.compute_case(record.numeric_identity)
        return [cryptbox.message_digest(tc.value, modulus_bits)
                for tc in keyforge.candidate_time_cases(case, now, self.cfg)]

    def candidate_reply(self, client_id: str, now: MinuteStamp, controller_key: PublicKey) -> CandidateReply:
        with self._lock:
            try:
                digests = self.generate_candidates(client_id, now, controller_key.bits)
            except UnknownClient:
                return CandidateReply(client_id, refusal=Status.UNKNOWN_CLIENT)
            except AccessDenied:
                return CandidateReply(client_id, refusal=Status.ACCESS_DENIED)
        return CandidateReply(client_id, tuple(cryptbox.encrypt(d, controller_key) for d in digests))

    def _check_admin(self, admin_token: str) -> None:
        if not hmac.compare_digest(admin_token.encode(), self._admin_token.encode()):
            raise Unauthorized("bad admin token")

    def set_access(self, admin_token: str, client_id: str, rights: Rights) -> RegistrationRecord:
        self._check_admin(admin_token)
        with self._lock:
            record = self.records.get(client_id)
            if record is None:
                raise UnknownClient(client_id)
            record = replace(record, access_rights=rights)
            self.records[client_id] = record
        return record

    def revoke_access(self, admin_token: str, client_id: str) -> RegistrationRecord:
        return self.set_access(admin_token, client_id, Rights.DENIED)

    def check_answers(self, client_id: str, answers: list[str]) -> Recovery:
        record = self.records.get(client_id)
        if record is None:
            raise UnknownClient(client_id)
        ok = len(answers) == SECURITY_QUESTIONS and all(
            hmac.compare_digest(answer_digest(salt, a), d)
            for salt, a, d in zip(record.salts, answers, record.security_answers)
        )
        with self._lock:
            if ok:
                self.recovery_open.add(client_id)
        return Recovery.ACCEPTED if ok else Recovery.REJECTED

    def reset_identity(self, client_id: str, numeric: NumericIdentity) -> RegistrationRecord:
        """Replace the stored identity after an accepted recovery (one use)."""
        with self._lock:
            if client_id not in self.recovery_open:
                raise Unauthorized("no accepted recovery for this client")
            if keyforge.compute_case(numeric).value == 0:
                raise ZeroCase("identity yields a zero case value")
            record = replace(self.records[client_id], numeric_identity=numeric)
            self.records[client_id] = record
            self.recovery_open.discard(client_id)
        return record

    def dump(self) -> str:
        return "".join(self.records[c].to_line() + "\n" for c in sorted(self.records))

    def load(self, text: str) -> None:
        for line in text.splitlines():
            if line.strip():
                record = RegistrationRecord.from_line(line)
                self.records[record.client_id] = record


LogSink = Callable[[AttemptLogEntry], None]


@dataclass
class ReplayCache:
    retention: int = REPLAY_RETENTION_MINUTES
    seen: dict[int, int] = field(default_factory=dict)

    def purge(self, now: int) -> None:
        for digest in [d for d, at in self.seen.items() if now - at >= self.retention]:
            del self.seen[digest]

    def __contains__(self, digest: int) -> bool:
        return digest in self.seen

    def add(self, digest: int, now: int) -> None:
        self.seen[digest] = now


class Controller:
    """The trusted third party that decides every login attempt."""

    def __init__(self, keypair: KeyPair, csp: CSP, log: LogSink,
                 rng: random.Random | None = None):
        self.keypair = keypair
        self.csp = csp
        self.log = log
        self.replay = ReplayCache()
        self.sessions: dict[bytes, str] = {}
        self._rng = rng if rng is not None else random.Random()
        self._lock = threading.Lock()

    @property
    def public_key(self) -> PublicKey:
        return self.keypair.public

    def _finish(self, req: LoginRequest, status: Status, now: MinuteStamp,
                detail: str = "", token: bytes | None = None) -> VerificationOutcome:
        self.log(AttemptLogEntry(req.client_id, status.value, now.epoch_minute, Actor.CONTROLLER, detail))
        return VerificationOutcome(status, now.epoch_minute, token)

    def precheck(self, req: LoginRequest, now: MinuteStamp) -> VerificationOutcome | None:
        """Outcome decidable without the CSP (window expiry), else ``None``."""
        if now.epoch_minute - req.sent_at >= keyforge.WINDOW_MINUTES:
            return self._finish(req, Status.EXPIRED, now, f"age {now.epoch_minute - req.sent_at} min")
        return None

    def complete(self, req: LoginRequest, reply: CandidateReply, now: MinuteStamp) -> VerificationOutcome:
        """Decide a request given the CSP's reply."""
        with self._lock:
            if now.epoch_minute - req.sent_at >= keyforge.WINDOW_MINUTES:
                return self._finish(req, Status.EXPIRED, now, f"age {now.epoch_minute - req.sent_at} min")
            if reply.refusal is not None:
                return self._finish(req, reply.refusal, now, "csp refused")
            try:
                digest = cryptbox.decrypt(req.ciphertext, self.keypair)
                candidates = {cryptbox.decrypt(c, self.keypair) for c in reply.candidates}
            except (StaleKey, ValueError) as exc:
                return self._finish(req, Status.MISMATCH, now, str(exc))
            self.replay.purge(now.epoch_minute)
            if digest in self.replay:
                return self._finish(req, Status.REPLAY, now, "digest already used")
            if digest not in candidates:
                return self._finish(req, Status.MISMATCH, now, "digest not in candidate set")
            self.replay.add(digest, now.epoch_minute)
            token = H(digest.to_bytes((digest.bit_length() + 7) // 8 or 1, "big") + self._rng.randbytes(16))
            self.sessions[token] = req.client_id
            return self._finish(req, Status.GRANTED, now, "", token)

    def verify(self, req: LoginRequest, now: MinuteStamp) -> VerificationOutcome:
        early = self.precheck(req, now)
        if early is not None:
            return early
        reply = self.csp.candidate_reply(req.client_id, now, self.public_key)
        return self.complete(req, reply, now)

    def timeout(self, req: LoginRequest, now: MinuteStamp) -> VerificationOutcome:
        """Close out a request whose CSP reply never arrived."""
        return self._finish(req, Status.EXPIRED, now, "csp reply lost")

    def recover_password(self, client_id: str, answers: list[str], now: MinuteStamp) -> Recovery:
        try:
            result = self.csp.check_answers(client_id, answers)
        except UnknownClient:
            self.log(AttemptLogEntry(client_id, "unknown_client", now.epoch_minute, Actor.CONTROLLER, "recovery"))
            raise
        self.log(AttemptLogEntry(client_id, result.value, now.epoch_minute, Actor.CONTROLLER, "recovery"))
        return result
