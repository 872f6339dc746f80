"""Append-only block storage, chain verification and key history.

On disk a ledger directory holds ``blockfile_NNNNNN.dat`` files of at most
``blocks_per_file`` blocks plus ``index.dat``; see docs/block-format.md.
"""

from __future__ import annotations

import bisect
import os
import struct
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator

from ..codec import ZERO_HASH, DecodeError
from ..errors import ChainDiscontinuity, HeightOutOfRange, StorageFailure
from .model import Block, Transaction

MAGIC = b"ABCL"
FORMAT_VERSION = 1
FILE_HEADER = struct.Struct(">4sHQ")   # magic, version, first height
INDEX_ENTRY = struct.Struct(">QIQI")   # height, file number, offset, length
LENGTH = struct.Struct(">I")


@dataclass(frozen=True)
class ChainStatus:
    intact: bool
    first_bad_height: int | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        if self.intact:
            return {"status": "Intact"}
        return {"status": "Corrupt", "first_bad_height": self.first_bad_height, "detail": self.detail}


class _Corrupt(Exception):
    def __init__(self, height: int, detail: str):
        super().__init__(detail)
        self.height = height
        self.detail = detail


class MemoryBlockStore:
    def __init__(self):
        self.records: list[bytes] = []

    def count(self) -> int:
        return len(self.records)

    def append(self, height: int, raw: bytes) -> None:
        self.records.append(bytes(raw))

    def read(self, height: int) -> bytes:
        return self.records[height]

    def scan(self, upto: int) -> Iterator[tuple[int, bytes]]:
        for h in range(upto):
            yield h, self.records[h]

    def close(self) -> None:
        pass


class FileBlockStore:
    def __init__(self, directory: str | os.PathLike, blocks_per_file: int = 1000, fsync: bool = True):
        self.dir = Path(directory)
        self.blocks_per_file = blocks_per_file
        self.fsync = fsync
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            self._index_path = self.dir / "index.dat"
            index = self._index_path.read_bytes() if self._index_path.exists() else b""
        except OSError as e:
            raise StorageFailure(f"cannot open block store {self.dir}: {e}") from e
        whole = len(index) // INDEX_ENTRY.size
        self._entries = [INDEX_ENTRY.unpack_from(index, i * INDEX_ENTRY.size) for i in range(whole)]
        if len(index) % INDEX_ENTRY.size:
            with open(self._index_path, "r+b") as fh:
                fh.truncate(whole * INDEX_ENTRY.size)
        self._drop_unindexed_tail()

    def _file(self, number: int) -> Path:
        return self.dir / f"blockfile_{number:06d}.dat"

    def _drop_unindexed_tail(self) -> None:
        """Discard bytes written after the last indexed block (torn append)."""
        if not self._entries:
            return
        _, fno, off, length = self._entries[-1]
        path = self._file(fno)
        end = off + LENGTH.size + length
        if path.exists() and path.stat().st_size > end:
            with open(path, "r+b") as fh:
                fh.truncate(end)

    def count(self) -> int:
        return len(self._entries)

    def append(self, height: int, raw: bytes) -> None:
        fno = height // self.blocks_per_file
        path = self._file(fno)
        try:
            with open(path, "ab") as fh:
                if fh.tell() == 0:
                    fh.write(FILE_HEADER.pack(MAGIC, FORMAT_VERSION, fno * self.blocks_per_file))
                offset = fh.tell()
                fh.write(LENGTH.pack(len(raw)) + raw)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            entry = (height, fno, offset, len(raw))
            with open(self._index_path, "ab") as fh:
                fh.write(INDEX_ENTRY.pack(*entry))
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
        except OSError as e:
            raise StorageFailure(f"block append failed: {e}") from e
        self._entries.append(entry)

    def read(self, height: int) -> bytes:
        _, fno, off, length = self._entries[height]
        try:
            with open(self._file(fno), "rb") as fh:
                fh.seek(off + LENGTH.size)
                data = fh.read(length)
        except OSError as e:
            raise StorageFailure(f"block read failed: {e}") from e
        if len(data) != length:
            raise StorageFailure(f"block {height} truncated on disk")
        return data

    def scan(self, upto: int) -> Iterator[tuple[int, bytes]]:
        """Walk the data files from raw bytes, cross-checking the on-disk index.

        Raises ``_Corrupt`` at the first height whose framing disagrees.
        """
        try:
            index = self._index_path.read_bytes()
        except OSError as e:
            raise StorageFailure(str(e)) from e
        height = 0
        fno = 0
        while height < upto:
            path = self._file(fno)
            try:
                data = path.read_bytes()
            except FileNotFoundError:
                raise _Corrupt(height, f"missing {path.name}") from None
            except OSError as e:
                raise StorageFailure(str(e)) from e
            first = fno * self.blocks_per_file
            if len(data) < FILE_HEADER.size or FILE_HEADER.unpack_from(data) != (
                    MAGIC, FORMAT_VERSION, first):
                raise _Corrupt(first, f"bad file header in {path.name}")
            pos = FILE_HEADER.size
            last = min(upto, first + self.blocks_per_file)
            while height < last:
                if pos + LENGTH.size > len(data):
                    raise _Corrupt(height, "record length missing")
                (length,) = LENGTH.unpack_from(data, pos)
                raw = data[pos + LENGTH.size:pos + LENGTH.size + length]
                if len(raw) != length:
                    raise _Corrupt(height, "record truncated")
                off = height * INDEX_ENTRY.size
                if off + INDEX_ENTRY.size > len(index) or \
                        INDEX_ENTRY.unpack_from(index, off) != (height, fno, pos, length):
                    raise _Corrupt(height, "index entry disagrees with data file")
                yield height, raw
                pos += LENGTH.size + length
                height += 1
            fno += 1

    def close(self) -> None:
        pass


class Ledger:
    def __init__(self, store=None):
        self.store = store if store is not None else MemoryBlockStore()
        self._lock = threading.RLock()
        self._tip_hash: bytes | None = None
        self._history: dict[str, list[tuple[int, int]]] | None = None
        self._history_keys: list[str] = []
        self._tx_index: dict[bytes, tuple[int, int]] | None = None
        self._get_cached = lru_cache(maxsize=256)(self._load_block)

    @classmethod
    def open(cls, directory, blocks_per_file: int = 1000, fsync: bool = True) -> "Ledger":
        return cls(FileBlockStore(directory, blocks_per_file, fsync))

    @property
    def tip(self) -> int:
        """Height of the last committed block, -1 when empty."""
        return self.store.count() - 1

    def tip_hash(self) -> bytes:
        with self._lock:
            if self._tip_hash is None:
                self._tip_hash = ZERO_HASH if self.tip < 0 else self.get_block(self.tip).header.hash()
            return self._tip_hash

    def append_block(self, block: Block) -> int:
        with self._lock:
            expected = self.tip + 1
            if block.header.height != expected:
                raise ChainDiscontinuity(f"block height {block.header.height}, expected {expected}")
            if block.header.previous_hash != self.tip_hash():
                raise ChainDiscontinuity(f"previous_hash of block {expected} does not match tip")
            if block.integrity_errors():
                raise ValueError(f"block {expected} is not self-consistent")
            self.store.append(expected, block.to_bytes())
            self._tip_hash = block.header.hash()
            if self._history is not None:
                self._index_block(block)
            if self._tx_index is not None:
                self._index_txs(block)
            return expected

    def _load_block(self, height: int) -> Block:
        try:
            return Block.from_bytes(self.store.read(height))
        except DecodeError as e:
            raise StorageFailure(f"block {height} cannot be decoded: {e}") from e

    def get_block(self, height: int) -> Block:
        if not 0 <= height <= self.tip:
            raise HeightOutOfRange(f"height {height} outside 0..{self.tip}")
        return self._get_cached(height)

    def blocks(self, start: int = 0) -> Iterator[Block]:
        for h in range(start, self.tip + 1):
            yield self.get_block(h)

    def verify_chain(self) -> ChainStatus:
        """Recompute every hash from the stored bytes, up to the tip seen at start."""
        upto = self.store.count()
        prev = ZERO_HASH
        expected = 0
        try:
            for height, raw in self.store.scan(upto):
                try:
                    block = Block.from_bytes(raw)
                except DecodeError as e:
                    return ChainStatus(False, height, f"undecodable: {e}")
                if block.header.height != height:
                    return ChainStatus(False, height, "height field mismatch")
                if block.header.previous_hash != prev:
                    return ChainStatus(False, height, "previous_hash mismatch")
                errors = block.integrity_errors()
                if errors:
                    return ChainStatus(False, height, "; ".join(errors))
                if block.to_bytes() != raw:
                    return ChainStatus(False, height, "non-canonical encoding")
                prev = block.header.hash()
                expected = height + 1
        except _Corrupt as c:
            return ChainStatus(False, c.height, c.detail)
        if expected != upto:
            return ChainStatus(False, expected, "chain shorter than index")
        return ChainStatus(True)

    # -- history

    def _index_block(self, block: Block) -> None:
        h = block.header.height
        for i, (tx, code) in enumerate(zip(block.txs, block.validity)):
            if not code.valid:
                continue
            for key in tx.rwset.write_keys():
                k = str(key)
                if k not in self._history:
                    bisect.insort(self._history_keys, k)
                    self._history[k] = []
                self._history[k].append((h, i))

    def _ensure_history(self) -> None:
        with self._lock:
            if self._history is None:
                self._history = {}
                self._history_keys = []
                for block in self.blocks():
                    self._index_block(block)

    @staticmethod
    def _matches(key: str, prefix: str) -> bool:
        if prefix.endswith((":", "/")):
            return key.startswith(prefix)
        return key == prefix or key.startswith(prefix + "/")

    def query_history_for_key(self, prefix: str) -> list[tuple[int, int, Transaction]]:
        """Valid transactions whose write set touches ``prefix``, in chain order.

        ``policy:policy01`` matches that key exactly; ``decision:r001`` also
        matches every ``decision:r001/...`` record.
        """
        self._ensure_history()
        with self._lock:
            start = bisect.bisect_left(self._history_keys, prefix)
            positions = set()
            for key in self._history_keys[start:]:
                if not key.startswith(prefix):
                    break
                if self._matches(key, prefix):
                    positions.update(self._history[key])
        return [(h, i, self.get_block(h).txs[i]) for h, i in sorted(positions)]

    def _index_txs(self, block: Block) -> None:
        for i, tx in enumerate(block.txs):
            self._tx_index.setdefault(tx.tx_id, (block.header.height, i))

    def find_tx(self, tx_id: bytes) -> tuple[int, int] | None:
        """Position of the first occurrence of ``tx_id`` on the chain."""
        with self._lock:
            if self._tx_index is None:
                self._tx_index = {}
                for block in self.blocks():
                    self._index_txs(block)
            return self._tx_index.get(tx_id)

    def close(self) -> None:
        self.store.close()
