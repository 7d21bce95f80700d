"""Client-side access to a deployment, either in-process or over HTTP.

The client role (computing and encrypting the time case) always runs
locally; only the controller/CSP calls go through a backend.
"""

from __future__ import annotations

import os
from pathlib import Path

import httpx
from pydantic import BaseModel

from . import cryptbox, protocol
from .errors import ALL_ERRORS, AuditError, ChainInvalid
from .keyforge import DeviceIdentity, MinuteStamp, PrimeConfig
from .schemas import (
    AuditRequest, LedgerEntries, LedgerStatus, LoginRequestModel, LoginResponse, PublicKeyResponse,
    QuestionAnswer, ReauditRequest, RecoverRequest, RecoverResponse, RegisterRequest,
    RegisterResponse, RevokeRequest, SentinelReport, UploadRequest, UploadResponse, VerdictResponse,
)
from .workspace import transaction


class LocalBackend:
    def __init__(self, root: str | os.PathLike, clock: MinuteStamp | None = None,
                 config_path: str | os.PathLike | None = None):
        self.root = Path(root)
        self.clock = clock
        self.config_path = config_path

    def _call(self, op, *args):
        with transaction(self.root, self.clock, self.config_path) as ws:
            return getattr(ws, op)(*args)

    def public_key(self) -> PublicKeyResponse:
        return self._call("public_key")

    def register(self, req: RegisterRequest) -> RegisterResponse:
        return self._call("register", req)

    def login(self, req: LoginRequestModel) -> LoginResponse:
        return self._call("login", req)

    def revoke(self, req: RevokeRequest) -> RegisterResponse:
        return self._call("revoke", req)

    def recover(self, req: RecoverRequest) -> RecoverResponse:
        return self._call("recover", req)

    def upload(self, req: UploadRequest) -> UploadResponse:
        return self._call("upload", req)

    def audit(self, req: AuditRequest) -> VerdictResponse:
        return self._call("audit", req)

    def reaudit(self, req: ReauditRequest) -> VerdictResponse:
        return self._call("reaudit", req)

    def verify_ledger(self) -> LedgerStatus:
        return self._call("verify_ledger")

    def entries(self, client_id=None, start=None, end=None) -> LedgerEntries:
        return self._call("entries", client_id, start, end)

    def sentinel_report(self) -> SentinelReport:
        return self._call("sentinel_report")


class RemoteBackend:
    """Same surface as :class:`LocalBackend`, spoken over HTTP."""

    def __init__(self, base_url: str | None = None, http: httpx.Client | None = None):
        self.http = http or httpx.Client(base_url=base_url, timeout=30.0)

    def _send(self, method: str, path: str, model: type[BaseModel], body: BaseModel | None = None,
              params: dict | None = None):
        resp = self.http.request(method, path, json=body.model_dump() if body else None,
                                 params={k: v for k, v in (params or {}).items() if v is not None})
        if resp.status_code >= 400:
            raise _error_from(resp)
        return model.model_validate(resp.json())

    def public_key(self):
        return self._send("GET", "/key", PublicKeyResponse)

    def register(self, req):
        return self._send("POST", "/register", RegisterResponse, req)

    def login(self, req):
        return self._send("POST", "/login", LoginResponse, req)

    def revoke(self, req):
        return self._send("POST", "/revoke", RegisterResponse, req)

    def recover(self, req):
        return self._send("POST", "/recover", RecoverResponse, req)

    def upload(self, req):
        return self._send("POST", "/files", UploadResponse, req)

    def audit(self, req):
        return self._send("POST", "/audit", VerdictResponse, req)

    def reaudit(self, req):
        return self._send("POST", "/reaudit", VerdictResponse, req)

    def verify_ledger(self):
        return self._send("GET", "/ledger/verify", LedgerStatus)

    def entries(self, client_id=None, start=None, end=None):
        return self._send("GET", "/ledger/entries", LedgerEntries,
                          params={"client_id": client_id, "start": start, "end": end})

    def sentinel_report(self):
        return self._send("GET", "/sentinel/report", SentinelReport)


def _error_from(resp: httpx.Response) -> AuditError:
    try:
        body = resp.json()
    except ValueError:
        return AuditError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    code = body.get("error") if isinstance(body, dict) else None
    if code == ChainInvalid.code:
        return ChainInvalid(body.get("index") or 0)
    if code in ALL_ERRORS:
        return ALL_ERRORS[code](body.get("detail", ""))
    # FastAPI validation errors arrive as {"detail": [...]}
    return ALL_ERRORS["parameter_error"](str(body.get("detail", body)) if isinstance(body, dict) else str(body))


def registration_request(client_id: str, identity: DeviceIdentity,
                         questions: list[tuple[str, str]]) -> RegisterRequest:
    n = identity.numeric()
    return RegisterRequest(client_id=client_id, moboard_num=str(n.moboard_num), disk_no=str(n.disk_no),
                           pwd_num=str(n.pwd_num),
                           questions=[QuestionAnswer(question=q, answer=a) for q, a in questions])


def login_request(client_id: str, identity: DeviceIdentity, key: PublicKeyResponse,
                  now: MinuteStamp) -> LoginRequestModel:
    pub = cryptbox.PublicKey(int(key.modulus), key.public_exponent, key.version,
                             key.created_at, key.validity_days)
    req = protocol.client_login(client_id, identity, now, pub, cfg=PrimeConfig(key.prime))
    return LoginRequestModel(client_id=client_id, ciphertext=str(req.ciphertext.value),
                             key_version=req.ciphertext.key_version, sent_at=req.sent_at)
