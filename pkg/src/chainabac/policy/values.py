"""Typed attribute values and rule operands."""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from enum import Enum

from ..errors import SchemaViolation

_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_DATETIME = re.compile(r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})Z$")
_DURATION = re.compile(r"^(-?\d+)(DAY|HOUR|MINUTE)$", re.IGNORECASE)


class ValueKind(str, Enum):
    BOOLEAN = "boolean"
    NUMERIC = "numeric"
    DATETIME = "datetime"
    STRING = "string"


def looks_like_datetime(text: str) -> bool:
    return bool(_DATE.match(text) or _DATETIME.match(text))


def parse_datetime(text: str) -> datetime:
    """Parse ``YYYY-MM-DD`` or ``YYYY-MM-DDThh:mm:ssZ`` into an aware UTC datetime."""
    m = _DATETIME.match(text) or _DATE.match(text)
    if not m:
        raise SchemaViolation(f"not an ISO-8601 UTC timestamp: {text!r}")
    try:
        return datetime(*(int(g) for g in m.groups()), tzinfo=timezone.utc)
    except ValueError as e:
        raise SchemaViolation(f"invalid calendar value {text!r}: {e}") from None


def format_datetime(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def utc(dt: datetime) -> datetime:
    """Normalize to second-resolution aware UTC."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True)
class AttributeValue:
    kind: ValueKind
    value: bool | Decimal | datetime | str

    def __post_init__(self):
        expected = {
            ValueKind.BOOLEAN: bool,
            ValueKind.NUMERIC: Decimal,
            ValueKind.DATETIME: datetime,
            ValueKind.STRING: str,
        }[self.kind]
        if type(self.value) is not expected:
            raise TypeError(f"{self.kind.value} value must be {expected.__name__}, "
                            f"got {type(self.value).__name__}")

    @classmethod
    def boolean(cls, v: bool) -> "AttributeValue":
        return cls(ValueKind.BOOLEAN, v)

    @classmethod
    def numeric(cls, v) -> "AttributeValue":
        return cls(ValueKind.NUMERIC, Decimal(v) if not isinstance(v, Decimal) else v)

    @classmethod
    def timestamp(cls, v: datetime) -> "AttributeValue":
        return cls(ValueKind.DATETIME, utc(v))

    @classmethod
    def string(cls, v: str) -> "AttributeValue":
        return cls(ValueKind.STRING, v)

    @classmethod
    def from_json(cls, raw) -> "AttributeValue":
        """Map a decoded JSON scalar onto its variant.

        Strings in the ISO-8601 date grammar become datetimes.
        """
        if isinstance(raw, bool):
            return cls.boolean(raw)
        if isinstance(raw, (int, Decimal)):
            d = Decimal(raw)
            if not d.is_finite():
                raise SchemaViolation(f"non-finite number {raw!r}")
            return cls.numeric(d)
        if isinstance(raw, str):
            if looks_like_datetime(raw):
                return cls.timestamp(parse_datetime(raw))
            return cls.string(raw)
        if isinstance(raw, float):
            raise SchemaViolation("binary float values are not accepted; decode with Decimal")
        raise SchemaViolation(f"attribute values must be JSON scalars, got {type(raw).__name__}")

    def to_json(self):
        if self.kind is ValueKind.DATETIME:
            return format_datetime(self.value)
        return self.value


@dataclass(frozen=True)
class Duration:
    count: int
    unit: str  # DAY | HOUR | MINUTE

    @classmethod
    def parse(cls, text: str) -> "Duration | None":
        m = _DURATION.match(text)
        if not m:
            return None
        return cls(int(m.group(1)), m.group(2).upper())

    def as_timedelta(self) -> timedelta:
        return {"DAY": timedelta(days=1), "HOUR": timedelta(hours=1),
                "MINUTE": timedelta(minutes=1)}[self.unit] * self.count

    def to_json(self) -> str:
        return f"{self.count}{self.unit}"


@dataclass(frozen=True)
class FieldRef:
    entity: str  # "user" | "resource"
    name: str

    @property
    def qualified(self) -> str:
        return f"{self.entity}.{self.name}"
