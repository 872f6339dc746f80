"""Workload specifications, library-domain fixtures and request streams."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from ..errors import ConfigInvalid, TransactionInvalid
from ..service import AccessService

TX_TYPES = ("RecordAttributes", "PolicyDecision", "QueryData")
ORDERER_MODES = ("Solo", "Raft")

# decisions are evaluated around this date so fixtures mix Permits and Denies
BASE_DAY = "2020-05-"


@dataclass(frozen=True)
class WorkloadSpec:
    tx_type: str = "PolicyDecision"
    total_txs: int = 5000
    send_rate_tps: int = 200
    clients: int = 10
    orderer_mode: str = "Solo"
    seed: int = 0
    # service and fixture shape
    batch_max_count: int = 500
    batch_timeout: float = 0.25
    raft_cluster_size: int = 3
    n_subjects: int = 200
    n_objects: int = 50
    n_policies: int = 5
    storage: str = "disk"        # "disk" (temporary directory) or "memory"
    drain_timeout: float = 60.0

    def __post_init__(self):
        if self.tx_type not in TX_TYPES:
            raise ConfigInvalid(f"tx_type must be one of {TX_TYPES}")
        if self.orderer_mode not in ORDERER_MODES:
            raise ConfigInvalid(f"orderer_mode must be one of {ORDERER_MODES}")
        for name in ("total_txs", "send_rate_tps", "clients", "n_subjects", "n_objects",
                     "n_policies", "batch_max_count"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive")
        if self.storage not in ("disk", "memory"):
            raise ConfigInvalid("storage must be 'disk' or 'memory'")

    def with_value(self, param: str, value) -> "WorkloadSpec":
        name = {"send_rate": "send_rate_tps", "clients": "clients",
                "total_txs": "total_txs"}.get(param)
        if name is None:
            raise ConfigInvalid(f"cannot sweep {param!r}; use send_rate, clients or total_txs")
        return replace(self, **{name: int(value)})

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorkloadSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown workload fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from None

    @classmethod
    def load(cls, path) -> "WorkloadSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as e:
            raise ConfigInvalid(f"cannot read workload spec {path}: {e}") from None


@dataclass
class Fixture:
    subject_ids: list[str] = field(default_factory=list)
    object_ids: list[str] = field(default_factory=list)
    policy_ids: list[str] = field(default_factory=list)


def _policy(policy_id: str, days: int) -> dict[str, Any]:
    return {
        "policyID": policy_id,
        "attributes": {"user": {"status": "Active", "expiration": "Date of expiration",
                                "libraryGroup": "Group ID"},
                       "resource": {"libraryGroup": "Group ID"}},
        "rules": {
            "user.status": {"comparison_type": "boolean", "comparison": "boolAnd", "value": True},
            "user.expiration": {"comparison_type": "datetime", "comparison": "isMoreRecentThan",
                                "value": f"{days}DAY"},
            "user.libraryGroup": {"comparison_type": "numeric", "comparison": "isStrictlyEqual",
                                  "field": "resource.libraryGroup"},
        },
    }


def subject_document(rng: random.Random, subject_id: str) -> dict[str, Any]:
    return {"subjectID": subject_id,
            "attributes": {"status": rng.random() < 0.85,
                           "expiration": f"{BASE_DAY}{rng.randint(5, 28):02d}",
                           "libraryGroup": rng.randint(10, 14)}}


def generate_fixture(svc: AccessService, n_subjects: int, n_objects: int, n_policies: int,
                     seed: int) -> Fixture:
    """Commit a deterministic library fixture (subjects, resources, policies)."""
    rng = random.Random(seed)
    fx = Fixture()
    pending = []
    for p in range(n_policies):
        pid = f"policy{p + 1:02d}"
        doc = _policy(pid, rng.randint(1, 3))
        orgs = rng.sample(list(svc.config.endorsement.organizations), svc.config.endorsement.threshold)
        pending.append(("policy", doc, svc.approve_policy(doc, orgs)))
        fx.policy_ids.append(pid)
    for s in range(n_subjects):
        sid = f"s{s + 1:04d}"
        pending.append(("subject", subject_document(rng, sid), None))
        fx.subject_ids.append(sid)
    for o in range(n_objects):
        oid = f"r{o + 1:04d}"
        doc = {"resourceID": oid, "attributes": {"libraryGroup": rng.randint(10, 14),
                                                 "policyID": rng.choice(fx.policy_ids)}}
        pending.append(("resource", doc, None))
        fx.object_ids.append(oid)
    # every key is distinct, so the whole fixture can be in flight at once
    waits = []
    for kind, doc, approvals in pending:
        if kind == "policy":
            out = svc.propose_policy(doc, approvals, wait=False)
        else:
            out = svc.record_attributes(doc, kind, wait=False)
        waits.append(out["tx_id"])
    svc.settle(waits)
    for tx_id in waits:
        status = svc.tx_status(tx_id)["status"]
        if status != "Valid":
            raise TransactionInvalid(bytes.fromhex(tx_id), f"fixture tx ended {status}")
    return fx


@dataclass(frozen=True)
class Request:
    index: int
    kind: str
    args: dict[str, Any]


def request_sequence(spec: WorkloadSpec, fx: Fixture) -> list[Request]:
    """The deterministic request stream for ``spec`` (same seed, same requests)."""
    rng = random.Random(spec.seed * 7919 + 1)
    out = []
    for i in range(spec.total_txs):
        if spec.tx_type == "PolicyDecision":
            args = {"subject_id": rng.choice(fx.subject_ids),
                    "object_id": rng.choice(fx.object_ids),
                    "clock": f"{BASE_DAY}{rng.randint(1, 28):02d}T12:00:00Z",
                    "request_id": f"req{i:06d}"}
        elif spec.tx_type == "RecordAttributes":
            sid = rng.choice(fx.subject_ids)
            args = {"document": subject_document(rng, sid), "kind": "subject"}
        else:
            args = {"namespace": "subject", "id": rng.choice(fx.subject_ids)}
        out.append(Request(i, spec.tx_type, args))
    return out
