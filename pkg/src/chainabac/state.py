"""Versioned world state with read/write-set capture and MVCC validation.

Transactions are *simulated* against committed state: reads record the
version they observed, writes are buffered.  At commit time each
read/write set is re-checked in block order; a transaction whose reads
are stale (including reads of keys recorded as absent) is invalidated
and changes nothing.  Valid writes for a block land as one atomic log
record, so a crash leaves either the whole block or none of it.
"""

from __future__ import annotations

import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterator

from .codec import DecodeError, Reader, Writer, sha256
from .errors import OutOfOrderBlock, StorageFailure

NAMESPACES = ("subject", "resource", "policy", "decision")


class ValidationCode(str, Enum):
    VALID = "Valid"
    MVCC_READ_CONFLICT = "MVCC_READ_CONFLICT"
    ENDORSEMENT_POLICY_FAILURE = "ENDORSEMENT_POLICY_FAILURE"
    DUPLICATE_TXID = "DUPLICATE_TXID"
    BAD_PAYLOAD = "BAD_PAYLOAD"

    @property
    def valid(self) -> bool:
        return self is ValidationCode.VALID

    def label(self) -> str:
        return "Valid" if self.valid else f"Invalid({self.value})"


@dataclass(frozen=True, order=True)
class Version:
    block_height: int
    tx_index: int

    def to_list(self) -> list[int]:
        return [self.block_height, self.tx_index]


@dataclass(frozen=True, order=True)
class StateKey:
    namespace: str
    id: str

    def __post_init__(self):
        if self.namespace not in NAMESPACES:
            raise ValueError(f"unknown namespace {self.namespace!r}")
        if not self.id or ":" in self.id:
            raise ValueError(f"state key ids must be non-empty and free of ':': {self.id!r}")

    def __str__(self) -> str:
        return f"{self.namespace}:{self.id}"

    @classmethod
    def parse(cls, text: str) -> "StateKey":
        ns, sep, ident = text.partition(":")
        if not sep:
            raise ValueError(f"not a state key: {text!r}")
        return cls(ns, ident)


@dataclass(frozen=True)
class ReadWriteSet:
    reads: tuple[tuple[StateKey, Version | None], ...] = ()
    writes: tuple[tuple[StateKey, bytes | None], ...] = ()  # None marks a delete

    def __post_init__(self):
        for name, items in (("reads", self.reads), ("writes", self.writes)):
            keys = [k for k, _ in items]
            if len(keys) != len(set(keys)):
                raise ValueError(f"duplicate keys in {name}")

    def encode(self, w: Writer) -> Writer:
        w.u32(len(self.reads))
        for key, ver in self.reads:
            w.text(str(key))
            if ver is None:
                w.u8(0)
            else:
                w.u8(1).u64(ver.block_height).u64(ver.tx_index)
        w.u32(len(self.writes))
        for key, value in self.writes:
            w.text(str(key)).optional_blob(value)
        return w

    def to_bytes(self) -> bytes:
        return self.encode(Writer()).getvalue()

    @classmethod
    def decode(cls, r: Reader) -> "ReadWriteSet":
        try:
            reads = []
            for _ in range(r.u32()):
                key = StateKey.parse(r.text())
                reads.append((key, Version(r.u64(), r.u64()) if r.flag() else None))
            writes = []
            for _ in range(r.u32()):
                key = StateKey.parse(r.text())
                writes.append((key, r.optional_blob()))
            return cls(tuple(reads), tuple(writes))
        except ValueError as e:
            if isinstance(e, DecodeError):
                raise
            raise DecodeError(str(e)) from None

    def write_keys(self) -> list[StateKey]:
        return [k for k, _ in self.writes]


@dataclass
class Simulation:
    rwset: ReadWriteSet
    result: Any = None


class SimulatedCrash(RuntimeError):
    """Raised by test crash hooks to emulate a process dying mid-commit."""


# ---------------------------------------------------------------------------
# durable backends: an append-only sequence of framed, checksummed records

class _FramedLog:
    """Record framing: u32 length | payload | sha256(payload)."""

    def records(self, data: bytes) -> tuple[list[bytes], int]:
        out, pos = [], 0
        while pos + 4 <= len(data):
            n = int.from_bytes(data[pos:pos + 4], "big")
            end = pos + 4 + n + 32
            if end > len(data):
                break
            payload = data[pos + 4:pos + 4 + n]
            if sha256(payload) != data[pos + 4 + n:end]:
                break
            out.append(payload)
            pos = end
        return out, pos

    @staticmethod
    def frame(payload: bytes) -> bytes:
        return len(payload).to_bytes(4, "big") + payload + sha256(payload)


class MemoryBackend(_FramedLog):
    """Byte buffer standing in for a log file; survives 'crashes' within one test."""

    def __init__(self):
        self.buffer = bytearray()

    def load(self) -> list[bytes]:
        recs, good = self.records(bytes(self.buffer))
        del self.buffer[good:]
        return recs

    def append(self, payload: bytes, crash_hook=None) -> None:
        framed = self.frame(payload)
        if crash_hook is not None:
            self.buffer += framed[:len(framed) // 2]
            crash_hook("mid_write")
            self.buffer += framed[len(framed) // 2:]
        else:
            self.buffer += framed

    def close(self) -> None:
        pass


class LogBackend(_FramedLog):
    """Single append-only log file; a torn tail record is discarded on open."""

    def __init__(self, path: str | os.PathLike, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._fh = None

    def load(self) -> list[bytes]:
        try:
            data = self.path.read_bytes() if self.path.exists() else b""
            recs, good = self.records(data)
            self._fh = open(self.path, "ab")
            if good != len(data):
                self._fh.truncate(good)
            return recs
        except OSError as e:
            raise StorageFailure(f"cannot open state log {self.path}: {e}") from e

    def append(self, payload: bytes, crash_hook=None) -> None:
        framed = self.frame(payload)
        try:
            if crash_hook is not None:
                self._fh.write(framed[:len(framed) // 2])
                self._fh.flush()
                crash_hook("mid_write")
                self._fh.write(framed[len(framed) // 2:])
            else:
                self._fh.write(framed)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as e:
            raise StorageFailure(f"state log write failed: {e}") from e

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------

class _SharedExclusiveLock:
    """Many simulations share; a commit excludes them all."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    @contextmanager
    def shared(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def exclusive(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class SimulationView:
    """Store view handed to transaction logic during simulation."""

    def __init__(self, committed: dict[StateKey, tuple[bytes, Version]]):
        self._committed = committed
        self._reads: dict[StateKey, Version | None] = {}
        self._writes: dict[StateKey, bytes | None] = {}

    def get(self, key: StateKey) -> bytes | None:
        if key in self._writes:
            return self._writes[key]
        entry = self._committed.get(key)
        if key not in self._reads:
            self._reads[key] = entry[1] if entry else None
        return entry[0] if entry else None

    def put(self, key: StateKey, value: bytes) -> None:
        self._writes[key] = bytes(value)

    def delete(self, key: StateKey) -> None:
        self._writes[key] = None

    def rwset(self) -> ReadWriteSet:
        return ReadWriteSet(tuple(sorted(self._reads.items())),
                            tuple(sorted(self._writes.items(), key=lambda kv: kv[0])))


@dataclass
class _Entry:
    key: StateKey
    value: bytes | None
    version: Version


class StateStore:
    def __init__(self, backend=None, crash_hook: Callable[[str], None] | None = None):
        self.backend = backend if backend is not None else MemoryBackend()
        self.crash_hook = crash_hook
        self._lock = _SharedExclusiveLock()
        self._commit_lock = threading.Lock()
        self._state: dict[StateKey, tuple[bytes, Version]] = {}
        self.height = -1
        for payload in self.backend.load():
            height, entries = self._decode_record(payload)
            if height != self.height + 1:
                raise StorageFailure(f"state log out of order at height {height}")
            self._apply(height, entries)

    # -- record codec

    @staticmethod
    def _encode_record(height: int, entries: list[_Entry]) -> bytes:
        w = Writer().u64(height).u32(len(entries))
        for e in entries:
            w.text(str(e.key)).optional_blob(e.value)
            w.u64(e.version.block_height).u64(e.version.tx_index)
        return w.getvalue()

    @staticmethod
    def _decode_record(payload: bytes) -> tuple[int, list[_Entry]]:
        r = Reader(payload)
        height = r.u64()
        entries = []
        for _ in range(r.u32()):
            key = StateKey.parse(r.text())
            value = r.optional_blob()
            entries.append(_Entry(key, value, Version(r.u64(), r.u64())))
        r.done()
        return height, entries

    def _apply(self, height: int, entries: list[_Entry]) -> None:
        for e in entries:
            if e.value is None:
                self._state.pop(e.key, None)
            else:
                self._state[e.key] = (e.value, e.version)
        self.height = height

    # -- reads

    def get(self, key: StateKey) -> tuple[bytes, Version] | None:
        with self._lock.shared():
            return self._state.get(key)

    def items(self, namespace: str | None = None, prefix: str = "") -> Iterator[tuple[StateKey, bytes, Version]]:
        with self._lock.shared():
            snapshot = sorted(self._state.items())
        for key, (value, ver) in snapshot:
            if namespace is not None and key.namespace != namespace:
                continue
            if key.id.startswith(prefix):
                yield key, value, ver

    @contextmanager
    def snapshot(self):
        """Hold commits off while several simulations must see the same state."""
        with self._lock.shared():
            yield self._state

    def simulate(self, tx_logic: Callable[[SimulationView], Any], _snapshot=None) -> Simulation:
        if _snapshot is not None:
            view = SimulationView(_snapshot)
            result = tx_logic(view)
            return Simulation(view.rwset(), result)
        with self._lock.shared():
            view = SimulationView(self._state)
            result = tx_logic(view)
        return Simulation(view.rwset(), result)

    # -- commit

    def _validate(self, block_height: int, rwsets: list[ReadWriteSet],
                  prevalidated: list[ValidationCode] | None):
        codes: list[ValidationCode] = []
        pending: dict[StateKey, Version | None] = {}
        entries: dict[StateKey, _Entry] = {}
        for i, rw in enumerate(rwsets):
            if prevalidated is not None and not prevalidated[i].valid:
                codes.append(prevalidated[i])
                continue
            ok = True
            for key, seen in rw.reads:
                if key in pending:
                    current = pending[key]
                else:
                    entry = self._state.get(key)
                    current = entry[1] if entry else None
                if current != seen:
                    ok = False
                    break
            if not ok:
                codes.append(ValidationCode.MVCC_READ_CONFLICT)
                continue
            ver = Version(block_height, i)
            for key, value in rw.writes:
                pending[key] = ver if value is not None else None
                entries[key] = _Entry(key, value, ver)
            codes.append(ValidationCode.VALID)
        return codes, list(entries.values())

    def validate(self, block_height: int, rwsets: list[ReadWriteSet],
                 prevalidated: list[ValidationCode] | None = None) -> list[ValidationCode]:
        """Validity codes the block would get, without committing it.

        Used when the codes must be recorded elsewhere (the ledger) before
        the state is updated with ``apply_validated``.
        """
        if block_height != self.height + 1:
            raise OutOfOrderBlock(f"expected height {self.height + 1}, got {block_height}")
        with self._lock.shared():
            codes, _ = self._validate(block_height, rwsets, prevalidated)
        return codes

    def validate_and_commit(self, block_height: int, rwsets: list[ReadWriteSet],
                            prevalidated: list[ValidationCode] | None = None) -> list[ValidationCode]:
        with self._commit_lock:
            if block_height != self.height + 1:
                raise OutOfOrderBlock(f"expected height {self.height + 1}, got {block_height}")
            codes, entries = self._validate(block_height, rwsets, prevalidated)
            if self.crash_hook:
                self.crash_hook("after_validate")
            payload = self._encode_record(block_height, entries)
            self.backend.append(payload, self.crash_hook)
            with self._lock.exclusive():
                self._apply(block_height, entries)
            return codes

    def apply_validated(self, block_height: int, rwsets: list[ReadWriteSet],
                        codes: list[ValidationCode]) -> None:
        """Replay an already-validated block (recovery from the ledger)."""
        with self._commit_lock:
            if block_height != self.height + 1:
                raise OutOfOrderBlock(f"expected height {self.height + 1}, got {block_height}")
            entries: dict[StateKey, _Entry] = {}
            for i, (rw, code) in enumerate(zip(rwsets, codes)):
                if code.valid:
                    for key, value in rw.writes:
                        entries[key] = _Entry(key, value, Version(block_height, i))
            payload = self._encode_record(block_height, list(entries.values()))
            self.backend.append(payload)
            with self._lock.exclusive():
                self._apply(block_height, list(entries.values()))

    def export(self) -> Iterator[dict[str, Any]]:
        """Committed (key, value, version) triples, JSON-ready."""
        for key, value, ver in self.items():
            try:
                shown: Any = json.loads(value)
            except ValueError:
                shown = value.hex()
            yield {"key": str(key), "value": shown, "version": ver.to_list()}

    def close(self) -> None:
        self.backend.close()
