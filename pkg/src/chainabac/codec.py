"""Canonical encodings and hashing.

Everything that gets hashed goes through this module so digests are
stable across processes and languages:

* ``canonical_json`` -- sorted keys, no insignificant whitespace, exact
  decimals (never binary floats).
* ``Writer``/``Reader`` -- length-prefixed big-endian binary fields in
  declared order.  ``Reader`` is strict: any non-canonical byte pattern
  (bad flag byte, trailing data, truncated field) raises ``DecodeError``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from decimal import Decimal
from typing import Any

ZERO_HASH = bytes(32)


class DecodeError(ValueError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def merkle_root(leaves: list[bytes]) -> bytes:
    """Binary Merkle root; odd levels duplicate their last node.

    An empty leaf list hashes to ``sha256(b"")``.
    """
    if not leaves:
        return sha256(b"")
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def _decimal_text(d: Decimal) -> str:
    if not d.is_finite():
        raise ValueError(f"non-finite number {d!r} has no canonical form")
    if d == d.to_integral_value():
        return str(int(d))
    return format(d.normalize(), "f")


def canonical_json(obj: Any) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, Decimal):
        return _decimal_text(obj)
    if isinstance(obj, float):
        raise TypeError("binary floats are not allowed in canonical JSON")
    if isinstance(obj, dict):
        items = sorted(obj.items())
        for k, _ in items:
            if not isinstance(k, str):
                raise TypeError(f"object key {k!r} is not a string")
        return "{" + ",".join(f"{json.dumps(k, ensure_ascii=False)}:{canonical_json(v)}"
                              for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def loads_exact(text: str | bytes) -> Any:
    """Parse JSON with Decimal numbers and duplicate-key rejection."""
    return json.loads(text, parse_float=Decimal, parse_int=Decimal,
                      object_pairs_hook=_reject_duplicates)


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">Q", v))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(bytes(b))
        return self

    def blob(self, b: bytes) -> "Writer":
        self.u32(len(b))
        self._parts.append(bytes(b))
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode("utf-8"))

    def optional_blob(self, b: bytes | None) -> "Writer":
        if b is None:
            return self.u8(0)
        return self.u8(1).blob(b)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DecodeError("truncated input")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError(str(e)) from None

    def flag(self) -> bool:
        v = self.u8()
        if v not in (0, 1):
            raise DecodeError(f"bad flag byte {v}")
        return v == 1

    def optional_blob(self) -> bytes | None:
        return self.blob() if self.flag() else None

    def done(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError(f"{len(self._data) - self._pos} trailing bytes")
