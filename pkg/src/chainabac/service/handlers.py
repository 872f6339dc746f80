"""Deterministic transaction handlers.

Each handler runs against a ``SimulationView`` and a decoded payload and
must produce the same reads, writes and result on every endorser.  They
only touch the view, the payload and immutable configuration.

Payloads::

    RecordAttributes  {"kind": "subject"|"resource", "record": {...}}
    PolicySubmit/     {"proposal_id": str, "policy": {...},
    PolicyUpdate       "approvals": [{"org": str, "signature": hex}, ...]}
    PolicyDecision    {"request_id", "subject_id", "object_id", "action",
                       "clock", "nonce", "client_id"}
"""

from __future__ import annotations

from typing import Any, Callable, Iterable

from ..codec import Writer, sha256
from ..errors import BadSignature, InsufficientApprovals, SchemaViolation
from ..ledger.model import DecisionRecord
from ..policy import (Decision, EntityKind, EvaluationContext, Outcome, Policy, ValueKind,
                      evaluate, format_datetime, parse_attributes, parse_datetime, parse_policy)
from ..state import SimulationView, StateKey
from . import crypto
from .config import EndorsementPolicy

POLICY_BINDING = "policyID"

SUBJECT_NOT_FOUND = "subject-not-found"
OBJECT_NOT_FOUND = "object-not-found"
POLICY_NOT_FOUND = "policy-not-found"


def record_kind(name: str) -> EntityKind:
    if name == "subject":
        return EntityKind.SUBJECT
    if name == "resource":
        return EntityKind.OBJECT
    raise SchemaViolation(f"record kind must be 'subject' or 'resource', not {name!r}")


def record_attributes(view: SimulationView, payload: dict[str, Any]) -> dict[str, Any]:
    kind = record_kind(payload.get("kind"))
    record = parse_attributes(payload.get("record"), kind)
    key = StateKey(kind.namespace, record.entity_id)
    # the read makes concurrent updates of one record conflict at validation
    previous = view.get(key)
    view.put(key, record.serialize().encode())
    return {"key": str(key), "action": "update" if previous is not None else "create"}


# -- policy administration

def policy_digest(policy: Policy) -> bytes:
    """The canonical hash every approving organization signs."""
    return sha256(policy.serialize().encode())


def sign_policy(policy: Policy, org: str, private_hex: str) -> dict[str, str]:
    return {"org": org, "signature": crypto.sign(private_hex, policy_digest(policy)).hex()}


def approving_orgs(approvals: Iterable[Any], digest: bytes, org_keys: dict[str, str],
                   endorsement: EndorsementPolicy, strict: bool) -> set[str]:
    """Distinct organizations with a valid approval over ``digest``.

    With ``strict`` any unknown organization or bad signature raises
    BadSignature; otherwise such approvals are simply not counted.
    """
    valid: set[str] = set()
    for item in approvals:
        org = item.get("org") if isinstance(item, dict) else None
        sig_hex = item.get("signature") if isinstance(item, dict) else None
        ok = False
        if isinstance(org, str) and isinstance(sig_hex, str) and org in endorsement.organizations:
            try:
                sig = bytes.fromhex(sig_hex)
            except ValueError:
                sig = b""
            ok = crypto.verify(org_keys[org], digest, sig)
        if ok:
            valid.add(org)
        elif strict:
            raise BadSignature(f"approval from {org!r} does not verify")
    return valid


def manage_policy(view: SimulationView, payload: dict[str, Any], org_keys: dict[str, str],
                  endorsement: EndorsementPolicy) -> dict[str, Any]:
    policy = parse_policy(payload.get("policy"))
    approvals = payload.get("approvals")
    if not isinstance(approvals, list):
        raise SchemaViolation("approvals must be a list")
    digest = policy_digest(policy)
    orgs = approving_orgs(approvals, digest, org_keys, endorsement, strict=True)
    if len(orgs) < endorsement.threshold:
        raise InsufficientApprovals(
            f"{len(orgs)} distinct approvals, {endorsement.threshold} required")
    key = StateKey("policy", policy.policy_id)
    previous = view.get(key)
    view.put(key, policy.serialize().encode())
    return {"policy_id": policy.policy_id, "digest": digest.hex(), "approved_by": sorted(orgs),
            "action": "update" if previous is not None else "create"}


# -- decisions

def _snapshot_hash(*raw: bytes | None) -> bytes:
    w = Writer()
    for blob in raw:
        w.optional_blob(blob)
    return sha256(w.getvalue())


def _safe_key(namespace: str, ident: Any) -> StateKey | None:
    if not isinstance(ident, str):
        return None
    try:
        return StateKey(namespace, ident)
    except ValueError:
        return None


def check_access(view: SimulationView, payload: dict[str, Any]) -> dict[str, Any]:
    """Evaluate one request and write its decision record.

    Every path ends in a written record; anything missing is a Deny with a
    reason, never a Permit.
    """
    clock = parse_datetime(payload["clock"])
    subject_id, object_id = payload["subject_id"], payload["object_id"]
    s_raw = view.get(StateKey("subject", subject_id))
    o_raw = view.get(StateKey("resource", object_id))
    p_raw = None
    policy_id = None
    reason = None
    if s_raw is None:
        reason = SUBJECT_NOT_FOUND
    if o_raw is None:
        reason = reason or OBJECT_NOT_FOUND
    else:
        obj = parse_attributes(o_raw, EntityKind.OBJECT)
        binding = obj.get(POLICY_BINDING)
        pkey = _safe_key("policy", binding.value) if (
            binding is not None and binding.kind is ValueKind.STRING) else None
        if pkey is not None:
            policy_id = pkey.id
            p_raw = view.get(pkey)
        if p_raw is None:
            reason = reason or POLICY_NOT_FOUND

    if reason is not None:
        decision = Decision(Outcome.DENY, (), reason)
    else:
        decision = evaluate(parse_policy(p_raw),
                            parse_attributes(s_raw, EntityKind.SUBJECT),
                            obj, EvaluationContext(clock))
    record = DecisionRecord(
        request_id=payload["request_id"], subject_id=subject_id, object_id=object_id,
        policy_id=policy_id, outcome=decision.outcome.value, failed_rules=decision.failed_rules,
        attribute_snapshot_hash=_snapshot_hash(s_raw, o_raw, p_raw),
        clock=format_datetime(clock), reason=decision.reason,
        client_id=payload.get("client_id", ""))
    key = StateKey("decision", f"{object_id}/{payload['nonce']}")
    view.put(key, record.to_bytes())
    return {"decision": decision.to_dict(), "record": record.to_dict(), "key": str(key)}


def handler_for(tx_type: str, org_keys: dict[str, str],
                endorsement: EndorsementPolicy) -> Callable[[SimulationView, dict], dict]:
    if tx_type == "RecordAttributes":
        return record_attributes
    if tx_type in ("PolicySubmit", "PolicyUpdate"):
        return lambda view, payload: manage_policy(view, payload, org_keys, endorsement)
    if tx_type == "PolicyDecision":
        return check_access
    raise SchemaViolation(f"no handler for transaction type {tx_type!r}")
