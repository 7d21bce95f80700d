"""Request and response models shared by the HTTP service and the CLI.

Big integers travel as decimal strings so no JSON client truncates them.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, field_validator


def _decimal(value: str) -> str:
    if not value.isdigit():
        raise ValueError("must be a non-negative decimal integer string")
    return value


class QuestionAnswer(BaseModel):
    question: str
    answer: str


class RegisterRequest(BaseModel):
    client_id: str = Field(min_length=1)
    moboard_num: str
    disk_no: str
    pwd_num: str
    questions: list[QuestionAnswer]

    _check = field_validator("moboard_num", "disk_no", "pwd_num")(_decimal)


class RegisterResponse(BaseModel):
    client_id: str
    access_rights: str
    registered_at: int


class PublicKeyResponse(BaseModel):
    version: int
    modulus: str
    public_exponent: int
    created_at: int
    validity_days: int
    prime: int = 7


class LoginRequestModel(BaseModel):
    client_id: str
    ciphertext: str
    key_version: int
    sent_at: int

    _check = field_validator("ciphertext")(_decimal)


class LoginResponse(BaseModel):
    client_id: str
    status: str
    decided_at: int
    session_token: Optional[str] = None


class RevokeRequest(BaseModel):
    client_id: str
    admin_token: str


class RecoverRequest(BaseModel):
    client_id: str
    answers: list[str]
    new_pwd_num: Optional[str] = None


class RecoverResponse(BaseModel):
    client_id: str
    status: str
    password_reset: bool = False


class UploadRequest(BaseModel):
    token: str
    file_id: str
    name: str
    payload_b64: str


class UploadResponse(BaseModel):
    file_id: str
    block_count: int
    file_checksum: str
    uploaded_at: int


class AuditRequest(BaseModel):
    token: str
    file_id: str
    count: Optional[int] = None  # None audits every block
    seed: int = 0
    auditor: str = "tpa"


class ReauditRequest(BaseModel):
    token: str
    file_id: str


class VerdictResponse(BaseModel):
    file_id: str
    status: str
    failing_indices: list[int]
    challenged: list[int]
    duration_us: int
    ledger_bad_block: Optional[int] = None


class LedgerStatus(BaseModel):
    valid: bool
    first_bad_block: Optional[int] = None
    blocks: int


class LedgerEntries(BaseModel):
    entries: list[str]


class AuditorRow(BaseModel):
    auditor_id: str
    status: str
    color: str
    aggregate_deviation: float
    record_count: int


class SentinelReport(BaseModel):
    rows: list[AuditorRow]
    csv: str
    newly_blacklisted: list[str]
    reaudits: dict[str, str]


class ErrorResponse(BaseModel):
    error: str
    detail: str
    index: Optional[int] = None
