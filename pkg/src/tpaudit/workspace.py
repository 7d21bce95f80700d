"""On-disk deployment state: one controller, one CSP, one ledger, one store.

Layout under the workspace root::

    config.json        settings (missing keys take DEFAULTS)
    controller.key     controller key pair (cryptbox key record)
    registry.jsonl     CSP registration store, one record per line
    ledger.chain       sealed ledger blocks
    sessions.jsonl     issued session tokens
    replay.json        controller replay cache
    blacklist.json     auditors already blacklisted
    audits.csv         one row per upload/audit/reaudit
    store/             payloads and file metadata

Every operation runs inside :func:`transaction`, which takes an exclusive
file lock, loads the state, and on success flushes the ledger and writes
everything back.
"""

from __future__ import annotations

import base64
import contextlib
import csv
import json
import logging
import os
import random
from pathlib import Path

from filelock import FileLock

from . import cryptbox
from .canon import encode_record
from .cryptbox import Ciphertext
from .errors import AuditError, BadToken, InsufficientData, ParameterError
from .integrity import DEFAULT_BLOCK_SIZE, CloudStore, IntegrityAuditor
from .keyforge import ALLOWED_PRIMES, MinuteStamp, NumericIdentity, PrimeConfig
from .ledger import DEFAULT_BATCH_SIZE, Ledger, verify_chain, verify_file
from .protocol import CSP, AttemptLogEntry, Controller, LoginRequest, Recovery
from .schemas import (
    AuditorRow, AuditRequest, LedgerEntries, LedgerStatus, LoginRequestModel, LoginResponse,
    PublicKeyResponse, ReauditRequest, RecoverRequest, RecoverResponse, RegisterRequest,
    RegisterResponse, RevokeRequest, SentinelReport, UploadRequest, UploadResponse, VerdictResponse,
)
from .sentinel import AuditorStatus, Sentinel, records_from_ledger

log = logging.getLogger(__name__)

ENV_PREFIX = "TPAUDIT_"
AUDIT_CSV_HEADER = ("at", "op", "file_id", "auditor", "status", "failing", "duration_us")
DEFAULTS = {
    "prime": 7,
    "block_size": DEFAULT_BLOCK_SIZE,
    "batch_size": DEFAULT_BATCH_SIZE,
    "k": 3.0,
    "min_n": 10,
    "seed": None,
    "key_bits": cryptbox.DEFAULT_BITS,
    "validity_days": cryptbox.DEFAULT_VALIDITY_DAYS,
    "admin_token": "change-me",
}


def load_config(root: str | os.PathLike, override: str | os.PathLike | None = None) -> dict:
    cfg = dict(DEFAULTS)
    path = Path(override) if override else Path(root) / "config.json"
    if path.exists():
        cfg.update(json.loads(path.read_text()))
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    if cfg["prime"] not in ALLOWED_PRIMES:
        raise ParameterError(f"prime must be one of {ALLOWED_PRIMES}")
    if cfg["block_size"] <= 0 or cfg["batch_size"] <= 0 or cfg["min_n"] < 1 or cfg["k"] <= 0:
        raise ParameterError("block_size, batch_size, min_n and k must be positive")
    if cfg["key_bits"] < 32 or cfg["key_bits"] % 2:
        raise ParameterError("key_bits must be an even integer >= 32")
    return cfg


def init_workspace(root: str | os.PathLike, config: dict | None = None,
                   today: int | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = root / "config.json"
    if config or not cfg_path.exists():
        merged = {**(json.loads(cfg_path.read_text()) if cfg_path.exists() else {}), **(config or {})}
        cfg_path.write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    cfg = load_config(root)
    key_path = root / "controller.key"
    if not key_path.exists():
        seed = cfg["seed"] if cfg["seed"] is not None else random.SystemRandom().getrandbits(64)
        if today is None:
            today = MinuteStamp.now().epoch_minute // 1440
        kp = cryptbox.keygen(cfg["key_bits"], seed, created_at=today,
                             validity_days=cfg["validity_days"])
        key_path.write_text(kp.to_record())
    (root / "store").mkdir(exist_ok=True)
    return root


class Workspace:
    def __init__(self, root: str | os.PathLike, clock: MinuteStamp | None = None,
                 config_path: str | os.PathLike | None = None):
        self.root = Path(root)
        if not (self.root / "controller.key").exists():
            raise ParameterError(f"{self.root} is not an initialized workspace")
        self.config = load_config(self.root, config_path)
        self._clock = clock
        seed = self.config["seed"]
        rng = random.Random(seed) if seed is not None else random.SystemRandom()
        self.keypair = cryptbox.KeyPair.from_record((self.root / "controller.key").read_text())
        self.prime = PrimeConfig(self.config["prime"])
        self.ledger = Ledger.load(self.root / "ledger.chain", self.config["batch_size"], strict=False)
        self.csp = CSP(self.config["admin_token"], self.prime, rng)
        reg = self.root / "registry.jsonl"
        if reg.exists():
            self.csp.load(reg.read_text())
        self.controller = Controller(self.keypair, self.csp, self._log, rng)
        self._load_controller_state()
        self.store = CloudStore(self.root / "store")
        self.integrity = IntegrityAuditor(self.store, self.ledger, self.config["block_size"])
        bl = self.root / "blacklist.json"
        self.blacklisted: list[str] = json.loads(bl.read_text()) if bl.exists() else []
        self._audit_rows: list[tuple] = []

    @property
    def now(self) -> MinuteStamp:
        return self._clock or MinuteStamp.now()

    def _log(self, entry: AttemptLogEntry) -> None:
        self.ledger.append(entry.to_entry(), self.now.epoch_minute)

    def _load_controller_state(self) -> None:
        rp = self.root / "replay.json"
        if rp.exists():
            self.controller.replay.seen = {int(d): at for d, at in json.loads(rp.read_text()).items()}
        sp = self.root / "sessions.jsonl"
        if sp.exists():
            for line in sp.read_text().splitlines():
                if line.strip():
                    obj = json.loads(line)
                    self.controller.sessions[bytes.fromhex(obj["token"])] = obj["client_id"]

    def save(self) -> None:
        # a corrupt chain is evidence; never rewrite it
        if verify_chain(self.ledger) is None:
            self.ledger.flush(self.now.epoch_minute)
            self.ledger.save(self.root / "ledger.chain")
        _write(self.root / "registry.jsonl", self.csp.dump())
        _write(self.root / "replay.json",
               json.dumps({str(d): at for d, at in sorted(self.controller.replay.seen.items())}))
        _write(self.root / "sessions.jsonl", "".join(
            json.dumps({"token": t.hex(), "client_id": c}) + "\n"
            for t, c in self.controller.sessions.items()))
        _write(self.root / "blacklist.json", json.dumps(sorted(self.blacklisted)))
        if self._audit_rows:
            path = self.root / "audits.csv"
            new = not path.exists()
            with path.open("a", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                if new:
                    writer.writerow(AUDIT_CSV_HEADER)
                writer.writerows(self._audit_rows)
            self._audit_rows = []

    # protocol

    def public_key(self) -> PublicKeyResponse:
        pk = self.keypair.public
        return PublicKeyResponse(version=pk.version, modulus=str(pk.modulus),
                                 public_exponent=pk.public_exponent,
                                 created_at=pk.created_at, validity_days=pk.validity_days,
                                 prime=self.config["prime"])

    def register(self, req: RegisterRequest) -> RegisterResponse:
        numeric = NumericIdentity(int(req.moboard_num), int(req.disk_no), int(req.pwd_num))
        record = self.csp.register_numeric(req.client_id, numeric,
                                           [(q.question, q.answer) for q in req.questions],
                                           self.now.epoch_minute)
        self.ledger.append(_event("register", req.client_id, self.now.epoch_minute), self.now.epoch_minute)
        return RegisterResponse(client_id=record.client_id, access_rights=record.access_rights.value,
                                registered_at=record.registered_at)

    def login(self, req: LoginRequestModel) -> LoginResponse:
        lr = LoginRequest(req.client_id, Ciphertext(int(req.ciphertext), req.key_version), req.sent_at)
        outcome = self.controller.verify(lr, self.now)
        token = outcome.session_token.hex() if outcome.session_token else None
        return LoginResponse(client_id=req.client_id, status=outcome.status.value,
                             decided_at=outcome.decided_at, session_token=token)

    def revoke(self, req: RevokeRequest) -> RegisterResponse:
        record = self.csp.revoke_access(req.admin_token, req.client_id)
        self.ledger.append(_event("revoke", req.client_id, self.now.epoch_minute), self.now.epoch_minute)
        return RegisterResponse(client_id=record.client_id, access_rights=record.access_rights.value,
                                registered_at=record.registered_at)

    def recover(self, req: RecoverRequest) -> RecoverResponse:
        result = self.controller.recover_password(req.client_id, req.answers, self.now)
        reset = False
        if result is Recovery.ACCEPTED and req.new_pwd_num is not None:
            old = self.csp.records[req.client_id].numeric_identity
            self.csp.reset_identity(req.client_id, NumericIdentity(old.moboard_num, old.disk_no,
                                                                   int(req.new_pwd_num)))
            reset = True
        return RecoverResponse(client_id=req.client_id, status=result.value, password_reset=reset)

    # integrity

    def _session(self, token: str) -> str:
        try:
            key = bytes.fromhex(token)
        except ValueError:
            raise BadToken("malformed session token") from None
        client = self.controller.sessions.get(key)
        if client is None:
            raise BadToken("unknown session token")
        return client

    def upload(self, req: UploadRequest) -> UploadResponse:
        owner = self._session(req.token)
        payload = base64.b64decode(req.payload_b64, validate=True)
        rec = self.integrity.record_upload(req.file_id, payload, req.name, owner, self.now.epoch_minute)
        self._audit_rows.append((rec.uploaded_at, "upload", rec.file_id, owner, "stored", "", 0))
        return UploadResponse(file_id=rec.file_id, block_count=rec.block_count,
                              file_checksum=rec.file_checksum.hex(), uploaded_at=rec.uploaded_at)

    def audit(self, req: AuditRequest) -> VerdictResponse:
        self._session(req.token)
        now = self.now.epoch_minute
        n = self.store.record(req.file_id).block_count
        ch = self.integrity.issue_challenge(req.file_id, n if req.count is None else req.count,
                                            req.seed, req.auditor, now)
        verdict = self.integrity.audit_verify(ch, now)
        return self._verdict("audit", ch.block_indices, req.file_id, req.auditor, verdict)

    def reaudit(self, req: ReauditRequest) -> VerdictResponse:
        self._session(req.token)
        verdict = self.integrity.reaudit(req.file_id, self.now.epoch_minute)
        n = self.store.record(req.file_id).block_count
        return self._verdict("reaudit", range(n), req.file_id, "controller", verdict)

    def _verdict(self, op, indices, file_id, auditor, verdict) -> VerdictResponse:
        self._audit_rows.append((self.now.epoch_minute, op, file_id, auditor, verdict.status.value,
                                 " ".join(map(str, verdict.failing_indices)), verdict.duration_us))
        return VerdictResponse(file_id=file_id, status=verdict.status.value,
                               failing_indices=list(verdict.failing_indices), challenged=list(indices),
                               duration_us=verdict.duration_us, ledger_bad_block=verdict.ledger_bad_block)

    # ledger and sentinel

    def verify_ledger(self) -> LedgerStatus:
        bad = verify_file(self.root / "ledger.chain")
        return LedgerStatus(valid=bad is None, first_bad_block=bad, blocks=len(self.ledger.blocks))

    def entries(self, client_id: str | None = None, start: int | None = None,
                end: int | None = None) -> LedgerEntries:
        return LedgerEntries(entries=self.ledger.query(client_id, start, end))

    def sentinel_report(self) -> SentinelReport:
        sentinel = Sentinel(self.ledger, self.config["k"], self.config["min_n"])
        for rec in records_from_ledger(self.ledger):
            sentinel.observe(rec)
        for aid in self.blacklisted:
            if aid in sentinel.profiles:
                sentinel.profiles[aid].status = AuditorStatus.BLACKLISTED
        newly, reaudits = [], {}
        try:
            newly = sentinel.review(self.now.epoch_minute)
        except InsufficientData as exc:
            log.info("sentinel review skipped: %s", exc)
        if newly:
            self.blacklisted.extend(newly)
            for fid, verdict in sentinel.run_reaudits(self.integrity, self.now.epoch_minute).items():
                reaudits[fid] = verdict.status.value
                self._audit_rows.append((self.now.epoch_minute, "reaudit", fid, "controller",
                                         verdict.status.value,
                                         " ".join(map(str, verdict.failing_indices)), verdict.duration_us))
        rows = [AuditorRow(auditor_id=aid, status=p.status.value, color=p.color.value,
                           aggregate_deviation=round(p.aggregate, 4), record_count=len(p.history))
                for aid, p in sorted(sentinel.profiles.items())]
        return SentinelReport(rows=rows, csv=sentinel.report_csv(), newly_blacklisted=newly,
                              reaudits=reaudits)


def _event(kind: str, client_id: str, at: int) -> str:
    return encode_record({"kind": kind, "client_id": client_id, "at": at})


def _write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@contextlib.contextmanager
def transaction(root: str | os.PathLike, clock: MinuteStamp | None = None,
                config_path: str | os.PathLike | None = None):
    """Exclusive, all-or-nothing access to a workspace."""
    root = Path(root)
    with FileLock(str(root / ".workspace.lock")):
        ws = Workspace(root, clock, config_path)
        try:
            yield ws
        except AuditError:
            # attempt logs must survive a refused operation
            _save_quietly(ws)
            raise
        ws.save()


def _save_quietly(ws: Workspace) -> None:
    try:
        ws.save()
    except AuditError:
        pass
