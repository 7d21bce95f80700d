"""Exception hierarchy. Each class carries a stable ``code`` used by the
HTTP service and the CLI exit-code table."""


class AuditError(Exception):
    code = "error"


class InvalidIdentity(AuditError):
    code = "invalid_identity"


class ZeroCase(InvalidIdentity):
    code = "zero_case"


class ParameterError(AuditError, ValueError):
    code = "parameter_error"


class MessageTooLarge(AuditError, ValueError):
    code = "message_too_large"


class StaleKey(AuditError):
    code = "stale_key"


class AlreadyRegistered(AuditError):
    code = "already_registered"


class UnknownClient(AuditError):
    code = "unknown_client"


class AccessDenied(AuditError):
    code = "access_denied"


class Unauthorized(AuditError):
    code = "unauthorized"


class BadToken(AuditError):
    code = "bad_token"


class ChainInvalid(AuditError):
    code = "chain_invalid"

    def __init__(self, index: int):
        super().__init__(f"ledger chain invalid at block {index}")
        self.index = index


class EmptyFile(AuditError, ValueError):
    code = "empty_file"


class FileConflict(AuditError):
    code = "conflict"


class UnknownFile(AuditError):
    code = "unknown_file"


class InsufficientData(AuditError, ValueError):
    code = "insufficient_data"


class DegenerateModel(AuditError, ValueError):
    code = "degenerate_model"


class MalformedScript(AuditError, ValueError):
    code = "malformed_script"


ALL_ERRORS = {
    cls.code: cls
    for cls in (
        AuditError, InvalidIdentity, ZeroCase, ParameterError, MessageTooLarge,
        StaleKey, AlreadyRegistered, UnknownClient, AccessDenied, Unauthorized,
        BadToken, EmptyFile, FileConflict, UnknownFile, InsufficientData,
        DegenerateModel, MalformedScript,
    )
}
