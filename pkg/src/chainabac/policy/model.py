from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any

from ..codec import canonical_json
from .values import AttributeValue, Duration, FieldRef, ValueKind, format_datetime, utc


class EntityKind(str, Enum):
    SUBJECT = "Subject"
    OBJECT = "Object"

    @property
    def id_field(self) -> str:
        return "subjectID" if self is EntityKind.SUBJECT else "resourceID"

    @property
    def namespace(self) -> str:
        return "subject" if self is EntityKind.SUBJECT else "resource"

    @property
    def qualifier(self) -> str:
        """Prefix used by rule keys to address this entity's attributes."""
        return "user" if self is EntityKind.SUBJECT else "resource"


class Outcome(str, Enum):
    PERMIT = "Permit"
    DENY = "Deny"


# comparison_type -> allowed comparison names
OPERATORS: dict[ValueKind, frozenset[str]] = {
    ValueKind.BOOLEAN: frozenset({"boolAnd"}),
    ValueKind.NUMERIC: frozenset({"isStrictlyEqual", "isLessThan", "isGreaterThan"}),
    ValueKind.DATETIME: frozenset({"isMoreRecentThan", "isOlderThan"}),
    ValueKind.STRING: frozenset({"isStrictlyEqual"}),
}

# Recognized but rejected at parse time.
RESERVED_OPERATORS = {ValueKind.BOOLEAN: frozenset({"boolOr"})}


@dataclass(frozen=True)
class AttributeRecord:
    entity_id: str
    kind: EntityKind
    attributes: dict[str, AttributeValue] = field(default_factory=dict)

    def get(self, name: str) -> AttributeValue | None:
        return self.attributes.get(name)

    def to_document(self) -> dict[str, Any]:
        return {
            self.kind.id_field: self.entity_id,
            "attributes": {k: v.to_json() for k, v in self.attributes.items()},
        }

    def serialize(self) -> str:
        return canonical_json(self.to_document())


Operand = AttributeValue | Duration | FieldRef


@dataclass(frozen=True)
class Rule:
    target: FieldRef
    comparison_type: ValueKind
    comparison: str
    operand: Operand
    # Present in the published policy example but never given a meaning;
    # carried through serialization, ignored by evaluation.
    comparison_target: str | None = None

    @property
    def key(self) -> str:
        return self.target.qualified

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "comparison_type": self.comparison_type.value,
            "comparison": self.comparison,
        }
        if isinstance(self.operand, FieldRef):
            doc["field"] = self.operand.qualified
        else:
            doc["value"] = self.operand.to_json()
        if self.comparison_target is not None:
            doc["comparison_target"] = self.comparison_target
        return doc


@dataclass(frozen=True)
class Policy:
    policy_id: str
    subject_attributes: dict[str, Any]
    object_attributes: dict[str, Any]
    rules: tuple[Rule, ...] = ()

    def rule_keys(self) -> list[str]:
        return [r.key for r in self.rules]

    def to_document(self) -> dict[str, Any]:
        return {
            "policyID": self.policy_id,
            "attributes": {"user": dict(self.subject_attributes),
                           "resource": dict(self.object_attributes)},
            "rules": {r.key: r.to_document() for r in self.rules},
        }

    def serialize(self) -> str:
        return canonical_json(self.to_document())


@dataclass(frozen=True)
class Decision:
    """Outcome of one evaluation.

    ``reason`` is set only by the access service when a Deny happens before
    any rule could run (missing subject, object or policy); in that case
    ``failed_rules`` may be empty.
    """

    outcome: Outcome
    failed_rules: tuple[str, ...] = ()
    reason: str | None = None

    def __post_init__(self):
        if self.outcome is Outcome.PERMIT and (self.failed_rules or self.reason):
            raise ValueError("a Permit cannot carry failed rules or a deny reason")
        if self.outcome is Outcome.DENY and not (self.failed_rules or self.reason):
            raise ValueError("a Deny must name failed rules or a reason")

    @property
    def permitted(self) -> bool:
        return self.outcome is Outcome.PERMIT

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"outcome": self.outcome.value, "failed_rules": list(self.failed_rules)}
        if self.reason is not None:
            d["reason"] = self.reason
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Decision":
        return cls(Outcome(d["outcome"]), tuple(d.get("failed_rules", ())), d.get("reason"))

    def serialize(self) -> str:
        return canonical_json(self.to_dict())


@dataclass(frozen=True)
class EvaluationContext:
    clock: datetime

    def __post_init__(self):
        object.__setattr__(self, "clock", utc(self.clock))

    def to_dict(self) -> dict[str, Any]:
        return {"clock": format_datetime(self.clock)}
