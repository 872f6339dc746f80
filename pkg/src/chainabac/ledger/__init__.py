"""Hash-chained block log with tamper detection and audit history."""

from .model import Block, BlockHeader, DecisionRecord, Transaction, TxType
from .store import ChainStatus, FileBlockStore, Ledger, MemoryBlockStore

__all__ = ["Block", "BlockHeader", "ChainStatus", "DecisionRecord", "FileBlockStore", "Ledger",
           "MemoryBlockStore", "Transaction", "TxType"]
