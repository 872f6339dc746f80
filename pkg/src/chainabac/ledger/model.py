"""Transactions, blocks and decision records with their canonical encodings.

Binary layout (all integers big-endian; ``blob`` = u32 length + bytes)::

    transaction = tx_id[32] | body
    body        = blob(tx_type) | blob(payload) | rwset
                  | u32 n | n * (blob(org_id) | blob(signature))
                  | blob(timestamp) | blob(client_id)
    header      = u64 height | previous_hash[32] | data_hash[32] | metadata_hash[32]
    block       = header | u32 n | n * blob(transaction)
                  | u32 n | n * blob(validation_code)

``tx_id`` is SHA-256 over ``body``; ``data_hash`` is the Merkle root over
the tx ids; ``metadata_hash`` is SHA-256 over the encoded validity list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any

from ..codec import ZERO_HASH, DecodeError, Reader, Writer, canonical_bytes, loads_exact, merkle_root, sha256
from ..state import ReadWriteSet, ValidationCode


class TxType(str, Enum):
    RECORD_ATTRIBUTES = "RecordAttributes"
    POLICY_SUBMIT = "PolicySubmit"
    POLICY_UPDATE = "PolicyUpdate"
    POLICY_DECISION = "PolicyDecision"
    QUERY_DATA = "QueryData"


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_timestamp(text: str) -> datetime:
    try:
        return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)
    except ValueError as e:
        raise DecodeError(f"bad timestamp {text!r}") from e


@dataclass(frozen=True)
class Transaction:
    tx_type: TxType
    payload: bytes
    rwset: ReadWriteSet
    timestamp: datetime
    client_id: str
    approvals: tuple[tuple[str, bytes], ...] = ()
    tx_id: bytes = field(default=b"", compare=False)

    def __post_init__(self):
        if not self.tx_id:
            object.__setattr__(self, "tx_id", sha256(self.body_bytes()))

    def signing_bytes(self) -> bytes:
        """What an endorser signs: everything except the approvals themselves."""
        w = Writer().text(self.tx_type.value).blob(self.payload)
        self.rwset.encode(w)
        w.text(format_timestamp(self.timestamp)).text(self.client_id)
        return w.getvalue()

    def body_bytes(self) -> bytes:
        w = Writer().text(self.tx_type.value).blob(self.payload)
        self.rwset.encode(w)
        w.u32(len(self.approvals))
        for org, sig in self.approvals:
            w.text(org).blob(sig)
        w.text(format_timestamp(self.timestamp)).text(self.client_id)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return self.tx_id + self.body_bytes()

    def with_approvals(self, approvals) -> "Transaction":
        return Transaction(self.tx_type, self.payload, self.rwset, self.timestamp,
                           self.client_id, tuple(approvals))

    def payload_json(self) -> Any:
        return loads_exact(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        tx_id = r.raw(32)
        try:
            tx_type = TxType(r.text())
        except ValueError as e:
            raise DecodeError(str(e)) from None
        payload = r.blob()
        rwset = ReadWriteSet.decode(r)
        approvals = tuple((r.text(), r.blob()) for _ in range(r.u32()))
        ts = parse_timestamp(r.text())
        client = r.text()
        r.done()
        return cls(tx_type, payload, rwset, ts, client, approvals, tx_id)

    def id_is_consistent(self) -> bool:
        return self.tx_id == sha256(self.body_bytes())


@dataclass(frozen=True)
class BlockHeader:
    height: int
    previous_hash: bytes
    data_hash: bytes
    metadata_hash: bytes

    def to_bytes(self) -> bytes:
        return (Writer().u64(self.height).raw(self.previous_hash).raw(self.data_hash)
                .raw(self.metadata_hash).getvalue())

    def hash(self) -> bytes:
        return sha256(self.to_bytes())


def _validity_bytes(validity) -> bytes:
    w = Writer().u32(len(validity))
    for v in validity:
        w.text(v.value)
    return w.getvalue()


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: tuple[Transaction, ...]
    validity: tuple[ValidationCode, ...]

    @classmethod
    def build(cls, height: int, previous_hash: bytes, txs, validity) -> "Block":
        txs, validity = tuple(txs), tuple(validity)
        if len(txs) != len(validity):
            raise ValueError("validity flags must align with transactions")
        header = BlockHeader(height, previous_hash, merkle_root([t.tx_id for t in txs]),
                             sha256(_validity_bytes(validity)))
        return cls(header, txs, validity)

    @classmethod
    def genesis(cls) -> "Block":
        return cls.build(0, ZERO_HASH, (), ())

    def to_bytes(self) -> bytes:
        w = Writer().raw(self.header.to_bytes()).u32(len(self.txs))
        for tx in self.txs:
            w.blob(tx.to_bytes())
        w.raw(_validity_bytes(self.validity))
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        r = Reader(data)
        header = BlockHeader(r.u64(), r.raw(32), r.raw(32), r.raw(32))
        txs = tuple(Transaction.from_bytes(r.blob()) for _ in range(r.u32()))
        try:
            validity = tuple(ValidationCode(r.text()) for _ in range(r.u32()))
        except ValueError as e:
            if isinstance(e, DecodeError):
                raise
            raise DecodeError(str(e)) from None
        r.done()
        return cls(header, txs, validity)

    def integrity_errors(self) -> list[str]:
        """Recompute every derived hash; an empty list means the block is self-consistent."""
        errors = []
        if len(self.txs) != len(self.validity):
            errors.append("validity/tx count mismatch")
        for i, tx in enumerate(self.txs):
            if not tx.id_is_consistent():
                errors.append(f"tx {i} id mismatch")
        if merkle_root([t.tx_id for t in self.txs]) != self.header.data_hash:
            errors.append("data_hash mismatch")
        if sha256(_validity_bytes(self.validity)) != self.header.metadata_hash:
            errors.append("metadata_hash mismatch")
        return errors


@dataclass(frozen=True)
class DecisionRecord:
    request_id: str
    subject_id: str
    object_id: str
    policy_id: str | None
    outcome: str
    failed_rules: tuple[str, ...]
    attribute_snapshot_hash: bytes
    clock: str
    reason: str | None = None
    client_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = {
            "request_id": self.request_id,
            "subject_id": self.subject_id,
            "object_id": self.object_id,
            "policy_id": self.policy_id,
            "outcome": self.outcome,
            "failed_rules": list(self.failed_rules),
            "attribute_snapshot_hash": self.attribute_snapshot_hash.hex(),
            "clock": self.clock,
            "client_id": self.client_id,
        }
        if self.reason is not None:
            d["reason"] = self.reason
        return d

    def to_bytes(self) -> bytes:
        return canonical_bytes(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DecisionRecord":
        return cls(d["request_id"], d["subject_id"], d["object_id"], d.get("policy_id"),
                   d["outcome"], tuple(d.get("failed_rules", ())),
                   bytes.fromhex(d["attribute_snapshot_hash"]), d["clock"], d.get("reason"),
                   d.get("client_id", ""))

    @classmethod
    def from_bytes(cls, data: bytes) -> "DecisionRecord":
        return cls.from_dict(loads_exact(data))
