"""Independent reference implementations used as test oracles.

Nothing here imports chainabac: the oracles work on raw JSON documents
so they cannot share a bug with the code under test.
"""

from __future__ import annotations

import random
import re
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from fractions import Fraction

DATE_FORMATS = ("%Y-%m-%d", "%Y-%m-%dT%H:%M:%SZ")
DURATION_RE = re.compile(r"^(-?\d+)(day|hour|minute)$", re.I)
UNIT_SECONDS = {"day": 86400, "hour": 3600, "minute": 60}


def _as_time(raw):
    if not isinstance(raw, str):
        return None
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(raw, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    return None


def _typed(ctype, raw):
    """Return the comparable form of ``raw`` for ``ctype`` or None on type mismatch."""
    if ctype == "boolean":
        return raw if isinstance(raw, bool) else None
    if ctype == "numeric":
        if isinstance(raw, bool) or not isinstance(raw, (int, Decimal)):
            return None
        return Fraction(str(raw))
    if ctype == "datetime":
        return _as_time(raw)
    if ctype == "string":
        if not isinstance(raw, str) or _as_time(raw) is not None:
            return None
        return raw
    raise AssertionError(ctype)


def oracle_rule(key, body, subject_attrs, resource_attrs, clock):
    entity, name = key.split(".", 1)
    own, other = (subject_attrs, resource_attrs) if entity == "user" else (resource_attrs, subject_attrs)
    if name not in own:
        return False
    ctype = body["comparison_type"]
    left = _typed(ctype, own[name])
    if left is None:
        return False
    if "field" in body:
        _, other_name = body["field"].split(".", 1)
        if other_name not in other:
            return False
        right = _typed(ctype, other[other_name])
    elif ctype == "datetime" and DURATION_RE.match(body["value"]):
        m = DURATION_RE.match(body["value"])
        right = clock + timedelta(seconds=int(m.group(1)) * UNIT_SECONDS[m.group(2).lower()])
    elif ctype == "string":
        right = body["value"]
    else:
        right = _typed(ctype, body["value"])
    if right is None:
        return False
    op = body["comparison"]
    if op in ("boolAnd", "isStrictlyEqual"):
        return left == right
    if op in ("isGreaterThan", "isMoreRecentThan"):
        return left > right
    if op in ("isLessThan", "isOlderThan"):
        return left < right
    raise AssertionError(op)


def oracle_decision(policy_doc, subject_doc, resource_doc, clock):
    """(outcome, failed rule keys) by evaluating every rule in isolation."""
    s = subject_doc["attributes"]
    r = resource_doc["attributes"]
    failed = [k for k, body in policy_doc["rules"].items()
              if not oracle_rule(k, body, s, r, clock)]
    return ("Deny" if failed else "Permit"), failed


# ---------------------------------------------------------------------------
# random case generation over a small value universe

ATTR_NAMES = ["a", "b", "c", "d", "e", "f"]
BOOLS = [True, False]
NUMBERS = [Decimal(0), Decimal(1), Decimal(2), Decimal("2.5"), Decimal(-1), Decimal(12)]
DATES = ["2020-05-10", "2020-05-11", "2020-05-12", "2020-05-12T12:00:00Z", "2021-01-01T00:00:00Z"]
STRINGS = ["x", "y", "library"]
DURATIONS = ["1DAY", "2day", "12HOUR", "30MINUTE", "-1DAY", "0DAY"]
CLOCKS = [datetime(2020, 5, 9, tzinfo=timezone.utc),
          datetime(2020, 5, 10, tzinfo=timezone.utc),
          datetime(2020, 5, 11, 12, tzinfo=timezone.utc),
          datetime(2020, 5, 12, tzinfo=timezone.utc),
          datetime(2020, 12, 31, 23, 59, 59, tzinfo=timezone.utc)]
OPS = {
    "boolean": ["boolAnd"],
    "numeric": ["isStrictlyEqual", "isLessThan", "isGreaterThan"],
    "datetime": ["isMoreRecentThan", "isOlderThan"],
    "string": ["isStrictlyEqual"],
}


def random_scalar(rng: random.Random):
    pool = rng.choice([BOOLS, NUMBERS, DATES, STRINGS])
    return rng.choice(pool)


def random_record(rng: random.Random, id_field: str, ident: str, max_attrs: int = 6):
    names = rng.sample(ATTR_NAMES, rng.randint(0, max_attrs))
    return {id_field: ident, "attributes": {n: random_scalar(rng) for n in names}}


def random_policy(rng: random.Random, max_rules: int = 5):
    rules = {}
    declared = {"user": {}, "resource": {}}
    for _ in range(rng.randint(0, max_rules)):
        entity = rng.choice(["user", "resource"])
        name = rng.choice(ATTR_NAMES)
        key = f"{entity}.{name}"
        if key in rules:
            continue
        ctype = rng.choice(list(OPS))
        body = {"comparison_type": ctype, "comparison": rng.choice(OPS[ctype])}
        declared[entity][name] = "desc"
        if rng.random() < 0.3:
            other = "resource" if entity == "user" else "user"
            other_name = rng.choice(ATTR_NAMES)
            declared[other][other_name] = "desc"
            body["field"] = f"{other}.{other_name}"
        elif ctype == "boolean":
            body["value"] = rng.choice(BOOLS)
        elif ctype == "numeric":
            body["value"] = rng.choice(NUMBERS)
        elif ctype == "datetime":
            body["value"] = rng.choice(DURATIONS + DATES)
        else:
            body["value"] = rng.choice(STRINGS)
        rules[key] = body
    return {"policyID": "prand", "attributes": declared, "rules": rules}


def random_case(rng: random.Random):
    return (random_policy(rng),
            random_record(rng, "subjectID", "s"),
            random_record(rng, "resourceID", "r"),
            rng.choice(CLOCKS))
