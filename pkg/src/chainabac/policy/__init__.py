"""Attribute/policy documents and the decision engine."""

from .documents import parse_attributes, parse_policy
from .engine import compare, evaluate
from .model import (OPERATORS, AttributeRecord, Decision, EntityKind, EvaluationContext,
                    Outcome, Policy, Rule)
from .values import AttributeValue, Duration, FieldRef, ValueKind, format_datetime, parse_datetime

__all__ = [
    "AttributeRecord", "AttributeValue", "Decision", "Duration", "EntityKind",
    "EvaluationContext", "FieldRef", "OPERATORS", "Outcome", "Policy", "Rule", "ValueKind",
    "compare", "evaluate", "format_datetime", "parse_attributes", "parse_datetime",
    "parse_policy",
]
