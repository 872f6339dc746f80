"""Exception hierarchy shared by every layer.

Each exception carries a stable ``code`` string; the CLI and the socket
protocol report that code verbatim so scripts can branch on it.
"""


class AbacError(Exception):
    code = "ERROR"

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self)}


class MalformedDocument(AbacError):
    code = "MALFORMED_DOCUMENT"


class SchemaViolation(AbacError):
    code = "SCHEMA_VIOLATION"


class StorageFailure(AbacError):
    code = "STORAGE_FAILURE"


class OutOfOrderBlock(AbacError):
    code = "OUT_OF_ORDER_BLOCK"


class ChainDiscontinuity(AbacError):
    code = "CHAIN_DISCONTINUITY"


class HeightOutOfRange(AbacError):
    code = "HEIGHT_OUT_OF_RANGE"


class Unavailable(AbacError):
    code = "UNAVAILABLE"


class InsufficientApprovals(AbacError):
    code = "INSUFFICIENT_APPROVALS"


class BadSignature(AbacError):
    code = "BAD_SIGNATURE"


class EndorsementMismatch(AbacError):
    code = "ENDORSEMENT_MISMATCH"


class Unauthorized(AbacError):
    code = "UNAUTHORIZED"


class TransactionInvalid(AbacError):
    """A state-changing call was ordered but invalidated at commit."""

    code = "TRANSACTION_INVALID"

    def __init__(self, tx_id: bytes, reason: str):
        super().__init__(f"transaction {tx_id.hex()} invalid: {reason}")
        self.tx_id = tx_id
        self.reason = reason

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "reason": self.reason,
                "tx_id": self.tx_id.hex()}


class ConfigInvalid(AbacError):
    code = "CONFIG_INVALID"


class AlreadyInitialized(AbacError):
    code = "ALREADY_INITIALIZED"


class NotInitialized(AbacError):
    code = "NOT_INITIALIZED"


class BadRequest(AbacError):
    """A protocol or command-line request that is malformed (usage error)."""
    code = "BAD_REQUEST"
