"""Helpers for building access services in tests."""

import copy
import json
from functools import lru_cache
from pathlib import Path

from chainabac.ordering import OrdererConfig
from chainabac.service import AccessService, EndorsementPolicy, NodeConfig
from chainabac.service import crypto

DATA = Path(__file__).parent / "data"
ORGS = ("org1", "org2", "org3")


@lru_cache(maxsize=1)
def org_keys() -> dict:
    return {org: crypto.generate_keypair() for org in ORGS}


def signers() -> dict:
    return {org: priv for org, (priv, _) in org_keys().items()}


def make_config(data_dir="/nonexistent", threshold=2, orderer=None, **kw) -> NodeConfig:
    kw.setdefault("allow_clock_override", True)
    return NodeConfig(data_dir=str(data_dir),
                      orderer=orderer or OrdererConfig(batch_max_count=50, batch_timeout=0.05),
                      endorsement=EndorsementPolicy(ORGS, threshold),
                      org_keys={org: pub for org, (_, pub) in org_keys().items()},
                      **kw)


def make_service(orderer=None, threshold=2, **kw) -> AccessService:
    svc_kw = {k: kw.pop(k) for k in list(kw) if k in ("commit_timeout", "retry_after",
                                                       "submit_timeout", "realtime")}
    return AccessService.in_memory(make_config(threshold=threshold, orderer=orderer, **kw),
                                   signers(), **svc_kw)


def doc(name: str) -> dict:
    return json.loads((DATA / name).read_text())


def bound_resource(resource_doc: dict, policy_id="policy01") -> dict:
    d = copy.deepcopy(resource_doc)
    d["attributes"]["policyID"] = policy_id
    return d


def seed_library(svc: AccessService) -> None:
    """The published library example: s001, r001 bound to policy01."""
    svc.record_attributes(doc("s001.json"), "subject")
    svc.record_attributes(bound_resource(doc("r001.json")), "resource")
    policy = doc("policy01.json")
    svc.propose_policy(policy, svc.approve_policy(policy, ["org1", "org2"]))
