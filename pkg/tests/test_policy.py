import json
import random
from datetime import datetime, timedelta
from decimal import Decimal
from pathlib import Path

import jsonschema
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainabac.codec import canonical_json
from chainabac.errors import MalformedDocument, SchemaViolation
from chainabac.policy import (AttributeRecord, AttributeValue, Decision, EntityKind,
                              EvaluationContext, Outcome, ValueKind, compare, evaluate,
                              parse_attributes, parse_policy)
from chainabac.policy.values import Duration, FieldRef

from conftest import utc
from oracles import oracle_decision, random_case, random_policy

SCHEMAS = Path(__file__).parents[1] / "src" / "chainabac" / "policy" / "schemas"


def ctx(*args):
    return EvaluationContext(utc(*args))


def records(s_doc, r_doc):
    return parse_attributes(s_doc, EntityKind.SUBJECT), parse_attributes(r_doc, EntityKind.OBJECT)


# -- parsing ---------------------------------------------------------------

def test_parse_policy01(policy01_doc):
    p = parse_policy(json.dumps(policy01_doc))
    assert p.policy_id == "policy01"
    assert p.rule_keys() == ["user.expiration", "user.libraryGroup", "user.status"]
    assert set(p.subject_attributes) == {"status", "expiration", "libraryGroup"}
    assert set(p.object_attributes) == {"libraryGroup"}
    lg = p.rules[1]
    assert lg.operand == FieldRef("resource", "libraryGroup")
    assert lg.comparison_target == "libraryGroup"
    assert p.rules[0].operand == Duration(1, "DAY")


def test_parse_empty_policy():
    p = parse_policy('{"policyID":"p0","attributes":{},"rules":{}}')
    assert p.policy_id == "p0" and p.rules == ()


def test_unknown_operator_rejected(policy01_doc):
    policy01_doc["rules"]["user.expiration"]["comparison"] = "isNewerIsh"
    with pytest.raises(SchemaViolation):
        parse_policy(json.dumps(policy01_doc))


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("policyID"),
    lambda d: d.pop("rules"),
    lambda d: d.__setitem__("policyID", ""),
    lambda d: d["rules"]["user.status"].__setitem__("comparison_type", "geo"),
    lambda d: d["rules"]["user.status"].__setitem__("comparison", "boolOr"),
    lambda d: d["rules"]["user.status"].__setitem__("value", "yes"),
    lambda d: d["rules"]["user.expiration"].__setitem__("value", "soon"),
    lambda d: d["rules"]["user.expiration"].__setitem__("value", 3),
    lambda d: d["rules"]["user.libraryGroup"].__setitem__("field", "user.status"),
    lambda d: d["rules"]["user.libraryGroup"].__setitem__("value", 1),
    lambda d: d["rules"].__setitem__("group.x", {"comparison_type": "string",
                                                 "comparison": "isStrictlyEqual", "value": "a"}),
    lambda d: d["rules"].__setitem__("user.undeclared", {"comparison_type": "string",
                                                         "comparison": "isStrictlyEqual",
                                                         "value": "a"}),
    lambda d: d["attributes"]["resource"].pop("libraryGroup"),
])
def test_schema_violations(policy01_doc, mutate):
    mutate(policy01_doc)
    with pytest.raises(SchemaViolation):
        parse_policy(json.dumps(policy01_doc))


def test_malformed_json():
    with pytest.raises(MalformedDocument):
        parse_policy("{not json")
    with pytest.raises(MalformedDocument):
        parse_attributes("[1,", EntityKind.SUBJECT)


def test_duplicate_keys_rejected():
    with pytest.raises(SchemaViolation):
        parse_attributes('{"subjectID":"s","attributes":{"a":1,"a":2}}', EntityKind.SUBJECT)


def test_parse_s001(s001_doc):
    rec = parse_attributes(json.dumps(s001_doc), EntityKind.SUBJECT)
    assert rec.entity_id == "s001"
    assert rec.attributes == {
        "status": AttributeValue.boolean(True),
        "expiration": AttributeValue.timestamp(utc(2020, 5, 12)),
        "libraryGroup": AttributeValue.numeric(12),
    }


def test_parse_r001(r001_doc):
    rec = parse_attributes(json.dumps(r001_doc), EntityKind.OBJECT)
    assert rec.entity_id == "r001"
    assert rec.attributes == {"libraryGroup": AttributeValue.numeric(12)}


def test_parse_empty_record():
    rec = parse_attributes('{"subjectID":"s9","attributes":{}}', EntityKind.SUBJECT)
    assert rec.attributes == {}


@pytest.mark.parametrize("doc", [
    '{"attributes":{}}',
    '{"subjectID":"s1","attributes":{"a":[1]}}',
    '{"subjectID":"s1","attributes":{"a":{"b":1}}}',
    '{"subjectID":"s1","attributes":{"a":null}}',
    '{"subjectID":"s1"}',
    '{"subjectID":"s:1","attributes":{}}',
    '{"subjectID":"s1","attributes":{"d":"2020-13-40"}}',
])
def test_attribute_violations(doc):
    with pytest.raises(SchemaViolation):
        parse_attributes(doc, EntityKind.SUBJECT)


def test_wrong_id_field_for_kind(r001_doc):
    with pytest.raises(SchemaViolation):
        parse_attributes(r001_doc, EntityKind.SUBJECT)


@pytest.mark.parametrize("text", ["2020-05-12", "2020-05-12T07:08:09Z"])
def test_datetime_roundtrip(text):
    rec = parse_attributes({"subjectID": "s", "attributes": {"t": text}}, EntityKind.SUBJECT)
    again = parse_attributes(rec.serialize(), EntityKind.SUBJECT)
    assert again == rec
    assert rec.attributes["t"].kind is ValueKind.DATETIME


def test_decimal_is_exact():
    rec = parse_attributes('{"subjectID":"s","attributes":{"x":0.1}}', EntityKind.SUBJECT)
    assert rec.attributes["x"].value == Decimal("0.1")


def test_published_schemas_accept_examples(policy01_doc, s001_doc, r001_doc):
    pol = json.loads((SCHEMAS / "policy.schema.json").read_text())
    jsonschema.validate(policy01_doc, pol)
    jsonschema.validate(s001_doc, json.loads((SCHEMAS / "subject.schema.json").read_text()))
    jsonschema.validate(r001_doc, json.loads((SCHEMAS / "resource.schema.json").read_text()))
    bad = json.loads(json.dumps(policy01_doc))
    bad["rules"]["user.expiration"]["comparison"] = "isNewerIsh"
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, pol)


# -- evaluation --------------------------------------------------------------

def test_policy01_permits(policy01_doc, s001_doc, r001_doc):
    s, r = records(s001_doc, r001_doc)
    d = evaluate(parse_policy(policy01_doc), s, r, ctx(2020, 5, 10))
    assert d == Decision(Outcome.PERMIT)


def test_empty_policy_permits(s001_doc, r001_doc):
    s, r = records(s001_doc, r001_doc)
    p = parse_policy({"policyID": "p0", "attributes": {}, "rules": {}})
    assert evaluate(p, s, r, ctx(1999, 1, 1)).permitted


def test_status_false_denies(policy01_doc, s001_doc, r001_doc):
    s001_doc["attributes"]["status"] = False
    s, r = records(s001_doc, r001_doc)
    d = evaluate(parse_policy(policy01_doc), s, r, ctx(2020, 5, 10))
    assert d.outcome is Outcome.DENY
    assert d.failed_rules == ("user.status",)
    assert oracle_decision(policy01_doc, s001_doc, r001_doc, utc(2020, 5, 10)) == \
        ("Deny", ["user.status"])


def test_missing_attribute_denies(policy01_doc, s001_doc, r001_doc):
    del r001_doc["attributes"]["libraryGroup"]
    s, r = records(s001_doc, r001_doc)
    d = evaluate(parse_policy(policy01_doc), s, r, ctx(2020, 5, 10))
    assert d.failed_rules == ("user.libraryGroup",)


def test_evaluate_kind_check(policy01_doc, s001_doc, r001_doc):
    s, r = records(s001_doc, r001_doc)
    with pytest.raises(ValueError):
        evaluate(parse_policy(policy01_doc), r, s, ctx(2020, 5, 10))


def _rule(doc_rule, key="user.x", declared_other=("y",)):
    other = "resource" if key.startswith("user") else "user"
    p = parse_policy({"policyID": "p", "attributes": {key.split(".")[0]: {key.split(".")[1]: ""},
                                                     other: {n: "" for n in declared_other}},
                      "rules": {key: doc_rule}})
    return p.rules[0]


def test_compare_bool_identity():
    rule = _rule({"comparison_type": "boolean", "comparison": "boolAnd", "value": True})
    empty = AttributeRecord("r", EntityKind.OBJECT)
    assert compare(rule, AttributeValue.boolean(True), empty, ctx(2020, 1, 1)) is True
    assert compare(rule, AttributeValue.boolean(False), empty, ctx(2020, 1, 1)) is False


def test_compare_field_reference():
    rule = _rule({"comparison_type": "numeric", "comparison": "isStrictlyEqual",
                  "field": "resource.libraryGroup"}, "user.libraryGroup", ("libraryGroup",))
    res = AttributeRecord("r001", EntityKind.OBJECT, {"libraryGroup": AttributeValue.numeric(12)})
    assert compare(rule, AttributeValue.numeric(12), res, ctx(2020, 1, 1))
    assert not compare(rule, AttributeValue.numeric(13), res, ctx(2020, 1, 1))
    assert not compare(rule, AttributeValue.numeric(12),
                       AttributeRecord("r2", EntityKind.OBJECT), ctx(2020, 1, 1))


def test_compare_duration_boundary():
    rule = _rule({"comparison_type": "datetime", "comparison": "isMoreRecentThan", "value": "1DAY"})
    empty = AttributeRecord("r", EntityKind.OBJECT)
    value = AttributeValue.timestamp(utc(2020, 5, 12))
    # clock + 1 day = 2020-05-12T12:00:00Z, which is later than the expiration
    assert not compare(rule, value, empty, ctx(2020, 5, 11, 12))
    assert compare(rule, value, empty, ctx(2020, 5, 10, 23, 59, 59))
    # strict: equality is not "more recent"
    assert not compare(rule, value, empty, ctx(2020, 5, 11))


def test_compare_type_mismatch_is_false():
    rule = _rule({"comparison_type": "numeric", "comparison": "isLessThan", "value": 3})
    assert not compare(rule, AttributeValue.string("2"), AttributeRecord("r", EntityKind.OBJECT),
                       ctx(2020, 1, 1))


def test_duration_units_case_insensitive():
    assert Duration.parse("3hour") == Duration(3, "HOUR")
    assert Duration.parse("-2Minute").as_timedelta() == timedelta(minutes=-2)
    assert Duration.parse("1 DAY") is None


def test_decision_invariant():
    with pytest.raises(ValueError):
        Decision(Outcome.PERMIT, ("user.x",))
    with pytest.raises(ValueError):
        Decision(Outcome.DENY)


# -- properties --------------------------------------------------------------

def _parsed(case):
    pdoc, sdoc, rdoc, clock = case
    return (parse_policy(pdoc), parse_attributes(sdoc, EntityKind.SUBJECT),
            parse_attributes(rdoc, EntityKind.OBJECT), EvaluationContext(clock))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_matches_oracle(seed):
    case = random_case(random.Random(seed))
    d = evaluate(*_parsed(case))
    outcome, failed = oracle_decision(*case)
    assert d.outcome.value == outcome
    assert list(d.failed_rules) == sorted(failed)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_deterministic(seed):
    case = random_case(random.Random(seed))
    a = evaluate(*_parsed(case)).serialize()
    b = evaluate(*_parsed(case)).serialize()
    assert a == b


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_policy_roundtrip(seed):
    p = parse_policy(random_policy(random.Random(seed)))
    assert parse_policy(p.serialize()) == p
    assert parse_policy(p.serialize()).serialize() == p.serialize()


@settings(max_examples=200, deadline=None)
@given(seeds, st.data())
def test_attribute_removal_never_permits(seed, data):
    pdoc, sdoc, rdoc, clock = random_case(random.Random(seed))
    before = evaluate(*_parsed((pdoc, sdoc, rdoc, clock)))
    targets = [(k.split(".")[0], k.split(".")[1]) for k in pdoc["rules"]]
    present = [(e, n) for e, n in targets
               if n in (sdoc if e == "user" else rdoc)["attributes"]]
    if not present or before.permitted:
        return
    entity, name = data.draw(st.sampled_from(present))
    del (sdoc if entity == "user" else rdoc)["attributes"][name]
    after = evaluate(*_parsed((pdoc, sdoc, rdoc, clock)))
    assert not after.permitted


@settings(max_examples=200, deadline=None)
@given(st.datetimes(min_value=datetime(2000, 1, 1),
                    max_value=datetime(2040, 1, 1)),
       st.integers(min_value=1, max_value=10**8),
       st.sampled_from(["1DAY", "12HOUR", "90MINUTE", "-3DAY"]),
       st.datetimes(min_value=datetime(2000, 1, 1),
                    max_value=datetime(2040, 1, 1)))
def test_more_recent_than_is_clock_monotone(clock, back_seconds, duration, expiry):
    rule = _rule({"comparison_type": "datetime", "comparison": "isMoreRecentThan",
                  "value": duration})
    value = AttributeValue.timestamp(expiry)
    empty = AttributeRecord("r", EntityKind.OBJECT)
    later = EvaluationContext(clock)
    earlier = EvaluationContext(clock - timedelta(seconds=back_seconds))
    if compare(rule, value, empty, later):
        assert compare(rule, value, empty, earlier)


def test_canonical_serialization_is_stable(policy01_doc):
    p = parse_policy(policy01_doc)
    assert p.serialize() == canonical_json(json.loads(p.serialize(), parse_float=Decimal,
                                                      parse_int=Decimal))
