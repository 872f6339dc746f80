"""Parsing of the JSON attribute and policy documents.

Policy documents look like::

    {"policyID": "policy01",
     "attributes": {"user": {"status": "Active"}, "resource": {}},
     "rules": {"user.status": {"comparison_type": "boolean",
                               "comparison": "boolAnd", "value": true}}}

All validation happens here so a policy that parses can always be evaluated.
"""

from __future__ import annotations

import json
from decimal import Decimal
from typing import Any

from ..codec import loads_exact
from ..errors import MalformedDocument, SchemaViolation
from .model import (OPERATORS, RESERVED_OPERATORS, AttributeRecord, EntityKind, Policy,
                    Rule)
from .values import AttributeValue, Duration, FieldRef, ValueKind, looks_like_datetime, parse_datetime

_RULE_KEYS = {"comparison_type", "comparison", "value", "field", "comparison_target"}
_QUALIFIERS = ("user", "resource")


def _load(document: str | bytes | dict) -> Any:
    if isinstance(document, dict):
        return document
    try:
        return loads_exact(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedDocument(f"invalid JSON: {e}") from None
    except ValueError as e:  # duplicate keys
        raise SchemaViolation(str(e)) from None


def _require_id(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaViolation(f"{name} must be a non-empty string")
    if ":" in value or "/" in value:
        raise SchemaViolation(f"{name} may not contain ':' or '/': {value!r}")
    return value


def parse_attributes(document: str | bytes | dict, kind: EntityKind) -> AttributeRecord:
    doc = _load(document)
    if not isinstance(doc, dict):
        raise SchemaViolation("attribute document must be a JSON object")
    if kind.id_field not in doc:
        raise SchemaViolation(f"missing {kind.id_field}")
    entity_id = _require_id(doc[kind.id_field], kind.id_field)
    extra = set(doc) - {kind.id_field, "attributes"}
    if extra:
        raise SchemaViolation(f"unexpected fields {sorted(extra)}")
    raw_attrs = doc.get("attributes")
    if not isinstance(raw_attrs, dict):
        raise SchemaViolation("attributes must be a JSON object")
    attrs = {}
    for name, raw in raw_attrs.items():
        if not name:
            raise SchemaViolation("attribute names must be non-empty")
        if isinstance(raw, (dict, list)) or raw is None:
            raise SchemaViolation(f"attribute {name!r} must be a scalar")
        attrs[name] = AttributeValue.from_json(raw)
    return AttributeRecord(entity_id, kind, attrs)


def _parse_qualified(text: Any, what: str) -> FieldRef:
    if not isinstance(text, str) or "." not in text:
        raise SchemaViolation(f"{what} must look like 'user.<attr>' or 'resource.<attr>'")
    entity, name = text.split(".", 1)
    if entity not in _QUALIFIERS or not name:
        raise SchemaViolation(f"{what} must look like 'user.<attr>' or 'resource.<attr>': {text!r}")
    return FieldRef(entity, name)


def _parse_literal(kind: ValueKind, comparison: str, raw: Any):
    if kind is ValueKind.BOOLEAN:
        if not isinstance(raw, bool):
            raise SchemaViolation("boolean rules need a true/false value")
        return AttributeValue.boolean(raw)
    if kind is ValueKind.NUMERIC:
        if isinstance(raw, bool) or not isinstance(raw, (int, Decimal)):
            raise SchemaViolation("numeric rules need a number value")
        return AttributeValue.from_json(raw)
    if kind is ValueKind.STRING:
        if not isinstance(raw, str):
            raise SchemaViolation("string rules need a string value")
        return AttributeValue.string(raw)
    # datetime: a duration relative to the evaluation clock, or an absolute timestamp
    if not isinstance(raw, str):
        raise SchemaViolation("datetime rules need a duration or timestamp string")
    duration = Duration.parse(raw)
    if duration is not None:
        return duration
    if looks_like_datetime(raw):
        return AttributeValue.timestamp(parse_datetime(raw))
    raise SchemaViolation(f"{comparison} needs a duration like '1DAY' or an ISO-8601 date, got {raw!r}")


def parse_rule(key: str, body: Any) -> Rule:
    target = _parse_qualified(key, "rule key")
    if not isinstance(body, dict):
        raise SchemaViolation(f"rule {key!r} must be a JSON object")
    unknown = set(body) - _RULE_KEYS
    if unknown:
        raise SchemaViolation(f"rule {key!r} has unknown fields {sorted(unknown)}")
    try:
        kind = ValueKind(body.get("comparison_type"))
    except ValueError:
        raise SchemaViolation(f"rule {key!r}: unknown comparison_type "
                              f"{body.get('comparison_type')!r}") from None
    comparison = body.get("comparison")
    if comparison in RESERVED_OPERATORS.get(kind, ()):
        raise SchemaViolation(f"rule {key!r}: {comparison!r} is reserved and not supported")
    if comparison not in OPERATORS[kind]:
        raise SchemaViolation(f"rule {key!r}: unknown {kind.value} comparison {comparison!r}")
    if ("value" in body) == ("field" in body):
        raise SchemaViolation(f"rule {key!r} needs exactly one of 'value' or 'field'")
    if "field" in body:
        operand = _parse_qualified(body["field"], f"rule {key!r} field")
        if operand.entity == target.entity:
            raise SchemaViolation(f"rule {key!r}: field must reference the opposite entity")
    else:
        operand = _parse_literal(kind, comparison, body["value"])
    ct = body.get("comparison_target")
    if ct is not None and not isinstance(ct, str):
        raise SchemaViolation(f"rule {key!r}: comparison_target must be a string")
    return Rule(target, kind, comparison, operand, ct)


def parse_policy(document: str | bytes | dict) -> Policy:
    doc = _load(document)
    if not isinstance(doc, dict):
        raise SchemaViolation("policy document must be a JSON object")
    for required in ("policyID", "rules"):
        if required not in doc:
            raise SchemaViolation(f"missing {required}")
    extra = set(doc) - {"policyID", "attributes", "rules"}
    if extra:
        raise SchemaViolation(f"unexpected fields {sorted(extra)}")
    policy_id = _require_id(doc["policyID"], "policyID")

    attrs = doc.get("attributes", {})
    if not isinstance(attrs, dict) or set(attrs) - {"user", "resource"}:
        raise SchemaViolation("attributes must be an object with optional 'user'/'resource' maps")
    declared = {}
    for q in _QUALIFIERS:
        section = attrs.get(q, {})
        if not isinstance(section, dict):
            raise SchemaViolation(f"attributes.{q} must be an object")
        if any(not name for name in section):
            raise SchemaViolation(f"attributes.{q} has an empty attribute name")
        declared[q] = section

    rules_doc = doc["rules"]
    if not isinstance(rules_doc, dict):
        raise SchemaViolation("rules must be a JSON object")
    # canonical rule order is by key, so stored and submitted forms evaluate alike
    rules = tuple(parse_rule(k, rules_doc[k]) for k in sorted(rules_doc))
    for rule in rules:
        refs = [rule.target] + ([rule.operand] if isinstance(rule.operand, FieldRef) else [])
        for ref in refs:
            if ref.name not in declared[ref.entity]:
                raise SchemaViolation(f"rule {rule.key!r} references undeclared "
                                      f"attribute {ref.qualified!r}")
    return Policy(policy_id, declared["user"], declared["resource"], rules)
