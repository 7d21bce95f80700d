"""HTTP service hosting the controller and CSP over one workspace."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import AuditError, ChainInvalid
from .keyforge import MinuteStamp
from .schemas import (
    AuditRequest, ErrorResponse, LedgerEntries, LedgerStatus, LoginRequestModel, LoginResponse,
    PublicKeyResponse, ReauditRequest, RecoverRequest, RecoverResponse, RegisterRequest,
    RegisterResponse, RevokeRequest, SentinelReport, UploadRequest, UploadResponse, VerdictResponse,
)
from .workspace import transaction

HTTP_STATUS = {
    "unknown_client": 404, "unknown_file": 404,
    "unauthorized": 401, "bad_token": 401,
    "already_registered": 409, "conflict": 409, "chain_invalid": 409,
    "stale_key": 409,
}


def create_app(root: str | os.PathLike, clock: Callable[[], Optional[MinuteStamp]] | None = None) -> FastAPI:
    """Build the app. ``clock`` returns the minute to use, or None for real time."""
    root = Path(root)
    clock = clock or (lambda: None)
    app = FastAPI(title="tpaudit", version="0.1.0")

    @app.exception_handler(AuditError)
    async def audit_error(request: Request, exc: AuditError):
        body = ErrorResponse(error=exc.code, detail=str(exc),
                             index=exc.index if isinstance(exc, ChainInvalid) else None)
        return JSONResponse(status_code=HTTP_STATUS.get(exc.code, 400), content=body.model_dump())

    def run(op, *args):
        with transaction(root, clock()) as ws:
            return getattr(ws, op)(*args)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/key", response_model=PublicKeyResponse)
    def key():
        return run("public_key")

    @app.post("/register", response_model=RegisterResponse)
    def register(req: RegisterRequest):
        return run("register", req)

    @app.post("/login", response_model=LoginResponse)
    def login(req: LoginRequestModel):
        return run("login", req)

    @app.post("/revoke", response_model=RegisterResponse)
    def revoke(req: RevokeRequest):
        return run("revoke", req)

    @app.post("/recover", response_model=RecoverResponse)
    def recover(req: RecoverRequest):
        return run("recover", req)

    @app.post("/files", response_model=UploadResponse)
    def upload(req: UploadRequest):
        return run("upload", req)

    @app.post("/audit", response_model=VerdictResponse)
    def audit(req: AuditRequest):
        return run("audit", req)

    @app.post("/reaudit", response_model=VerdictResponse)
    def reaudit(req: ReauditRequest):
        return run("reaudit", req)

    @app.get("/ledger/verify", response_model=LedgerStatus)
    def verify_ledger():
        return run("verify_ledger")

    @app.get("/ledger/entries", response_model=LedgerEntries)
    def entries(client_id: Optional[str] = None, start: Optional[int] = None, end: Optional[int] = None):
        return run("entries", client_id, start, end)

    @app.get("/sentinel/report", response_model=SentinelReport)
    def sentinel_report():
        return run("sentinel_report")

    return app


def serve(root: str | os.PathLike, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(create_app(root), host=host, port=port)
