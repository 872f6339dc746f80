"""Policy evaluation: a pure conjunction of typed comparisons.

Evaluation never reads the system clock; time comes from the
``EvaluationContext`` so replicated evaluators agree bit for bit.
"""

from __future__ import annotations

from .model import AttributeRecord, Decision, EntityKind, EvaluationContext, Outcome, Policy, Rule
from .values import AttributeValue, Duration, FieldRef


def _reference(rule: Rule, opposite: AttributeRecord, ctx: EvaluationContext) -> AttributeValue | None:
    operand = rule.operand
    if isinstance(operand, Duration):
        return AttributeValue.timestamp(ctx.clock + operand.as_timedelta())
    if isinstance(operand, FieldRef):
        return opposite.get(operand.name)
    return operand


def compare(rule: Rule, target_value: AttributeValue, opposite_record: AttributeRecord,
            ctx: EvaluationContext) -> bool:
    if target_value.kind is not rule.comparison_type:
        return False
    ref = _reference(rule, opposite_record, ctx)
    if ref is None or ref.kind is not rule.comparison_type:
        return False
    a, b = target_value.value, ref.value
    op = rule.comparison
    if op in ("boolAnd", "isStrictlyEqual"):
        return a == b
    if op in ("isGreaterThan", "isMoreRecentThan"):
        return a > b
    if op in ("isLessThan", "isOlderThan"):
        return a < b
    return False


def evaluate(policy: Policy, subject: AttributeRecord, obj: AttributeRecord,
             ctx: EvaluationContext) -> Decision:
    """Permit iff every rule holds; a rule whose target attribute is missing fails."""
    if subject.kind is not EntityKind.SUBJECT or obj.kind is not EntityKind.OBJECT:
        raise ValueError("evaluate expects a Subject record and an Object record")
    failed = []
    for rule in policy.rules:
        own, other = (subject, obj) if rule.target.entity == "user" else (obj, subject)
        value = own.get(rule.target.name)
        if value is None or not compare(rule, value, other, ctx):
            failed.append(rule.key)
    if failed:
        return Decision(Outcome.DENY, tuple(failed))
    return Decision(Outcome.PERMIT)
