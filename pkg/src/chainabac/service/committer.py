"""Validate ordered batches and commit them as blocks.

The ledger is written before the state store, so after a crash the state
can always be rebuilt forward from the chain (``recover``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from ..codec import DecodeError
from ..errors import AbacError
from ..ledger import Block, Ledger, Transaction, TxType
from ..policy import parse_policy
from ..state import StateStore, ValidationCode
from . import crypto
from .config import NodeConfig
from .handlers import approving_orgs, policy_digest

POLICY_TYPES = (TxType.POLICY_SUBMIT, TxType.POLICY_UPDATE)


@dataclass(frozen=True)
class CommitResult:
    tx_id: bytes
    code: ValidationCode
    height: int
    index: int

    @property
    def valid(self) -> bool:
        return self.code.valid

    def to_dict(self) -> dict[str, Any]:
        return {"tx_id": self.tx_id.hex(), "status": self.code.label(),
                "height": self.height, "tx_index": self.index}


class Committer:
    def __init__(self, ledger: Ledger, state: StateStore, config: NodeConfig):
        self.ledger = ledger
        self.state = state
        self.config = config

    def recover(self) -> int:
        """Replay chain blocks the state store has not seen; returns how many."""
        replayed = 0
        for height in range(self.state.height + 1, self.ledger.tip + 1):
            block = self.ledger.get_block(height)
            self.state.apply_validated(height, [t.rwset for t in block.txs], list(block.validity))
            replayed += 1
        return replayed

    # -- checks made at commit time, independent of the gateway

    def endorsed(self, tx: Transaction) -> bool:
        data = tx.signing_bytes()
        orgs = {org for org, sig in tx.approvals
                if org in self.config.endorsers and crypto.verify(self.config.org_keys[org], data, sig)}
        return len(orgs) == len(self.config.endorsers)

    def policy_gate(self, tx: Transaction) -> ValidationCode:
        """A policy key may only be written by a policy tx with enough approvals."""
        policy_writes = [(k, v) for k, v in tx.rwset.writes if k.namespace == "policy"]
        if not policy_writes:
            return ValidationCode.VALID
        if tx.tx_type not in POLICY_TYPES or len(policy_writes) != 1:
            return ValidationCode.ENDORSEMENT_POLICY_FAILURE
        try:
            payload = tx.payload_json()
            policy = parse_policy(payload["policy"])
            approvals = payload["approvals"]
        except (AbacError, DecodeError, json.JSONDecodeError, ValueError, KeyError, TypeError):
            return ValidationCode.BAD_PAYLOAD
        key, value = policy_writes[0]
        if key.id != policy.policy_id or value != policy.serialize().encode():
            return ValidationCode.ENDORSEMENT_POLICY_FAILURE
        if not isinstance(approvals, list):
            return ValidationCode.BAD_PAYLOAD
        orgs = approving_orgs(approvals, policy_digest(policy), self.config.org_keys,
                              self.config.endorsement, strict=False)
        if len(orgs) < self.config.endorsement.threshold:
            return ValidationCode.ENDORSEMENT_POLICY_FAILURE
        return ValidationCode.VALID

    def precheck(self, tx: Transaction) -> ValidationCode:
        if not tx.id_is_consistent():
            return ValidationCode.BAD_PAYLOAD
        if not self.endorsed(tx):
            return ValidationCode.ENDORSEMENT_POLICY_FAILURE
        return self.policy_gate(tx)

    def commit(self, txs) -> tuple[Block, list[CommitResult]]:
        txs = list(txs)
        height = self.ledger.tip + 1
        seen: set[bytes] = set()
        pre = []
        for tx in txs:
            if tx.tx_id in seen or self.ledger.find_tx(tx.tx_id) is not None:
                pre.append(ValidationCode.DUPLICATE_TXID)
            else:
                pre.append(self.precheck(tx))
            seen.add(tx.tx_id)
        rwsets = [t.rwset for t in txs]
        codes = self.state.validate(height, rwsets, pre)
        block = Block.build(height, self.ledger.tip_hash(), txs, codes)
        self.ledger.append_block(block)
        self.state.apply_validated(height, rwsets, codes)
        return block, [CommitResult(t.tx_id, c, height, i) for i, (t, c) in enumerate(zip(txs, codes))]
