"""Node configuration: orderer settings, organizations and their keys."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigInvalid
from ..ordering.config import OrdererConfig

DEFAULT_SOCKET_ENV = "CHAINABAC_SOCKET"


@dataclass(frozen=True)
class EndorsementPolicy:
    """Who must approve a policy change: ``threshold`` distinct organizations."""

    organizations: tuple[str, ...]
    threshold: int

    def __post_init__(self):
        object.__setattr__(self, "organizations", tuple(self.organizations))
        if len(set(self.organizations)) != len(self.organizations):
            raise ConfigInvalid("organizations must be distinct")
        if not 1 <= self.threshold <= len(self.organizations):
            raise ConfigInvalid("threshold must be between 1 and the number of organizations")

    def to_dict(self) -> dict[str, Any]:
        return {"organizations": list(self.organizations), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EndorsementPolicy":
        try:
            return cls(tuple(d["organizations"]), int(d["threshold"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigInvalid(f"bad endorsement policy: {e}") from None


@dataclass(frozen=True)
class NodeConfig:
    data_dir: str
    orderer: OrdererConfig = field(default_factory=OrdererConfig)
    endorsement: EndorsementPolicy = field(
        default_factory=lambda: EndorsementPolicy(("org1", "org2", "org3"), 2))
    # org id -> Ed25519 public key (hex)
    org_keys: dict[str, str] = field(default_factory=dict)
    # organizations running an endorsing peer; every one must sign each tx
    endorsers: tuple[str, ...] = ()
    # client ids allowed to call query_audit
    audit_roles: tuple[str, ...] = ("auditor",)
    socket_path: str = ""
    allow_clock_override: bool = False
    blocks_per_file: int = 1000
    fsync: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "endorsers", tuple(self.endorsers or self.endorsement.organizations))
        object.__setattr__(self, "audit_roles", tuple(self.audit_roles))
        if len(set(self.endorsers)) < 2:
            raise ConfigInvalid("at least two endorsing organizations are required")
        unknown = (set(self.endorsers) | set(self.endorsement.organizations)) - set(self.org_keys)
        if unknown:
            raise ConfigInvalid(f"no public key registered for {sorted(unknown)}")
        if self.blocks_per_file < 1:
            raise ConfigInvalid("blocks_per_file must be positive")

    @property
    def socket(self) -> str:
        return self.socket_path or str(Path(self.data_dir) / "node.sock")

    def to_dict(self) -> dict[str, Any]:
        return {
            "data_dir": self.data_dir,
            "orderer": self.orderer.to_dict(),
            "endorsement": self.endorsement.to_dict(),
            "org_keys": dict(sorted(self.org_keys.items())),
            "endorsers": list(self.endorsers),
            "audit_roles": list(self.audit_roles),
            "socket_path": self.socket_path,
            "allow_clock_override": self.allow_clock_override,
            "blocks_per_file": self.blocks_per_file,
            "fsync": self.fsync,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NodeConfig":
        if not isinstance(d, dict):
            raise ConfigInvalid("config must be a JSON object")
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown config fields {sorted(unknown)}")
        if "data_dir" not in d:
            raise ConfigInvalid("data_dir is required")
        if "orderer" in d:
            d["orderer"] = OrdererConfig.from_dict(d["orderer"])
        if "endorsement" in d:
            d["endorsement"] = EndorsementPolicy.from_dict(d["endorsement"])
        for name in ("endorsers", "audit_roles"):
            if name in d:
                d[name] = tuple(d[name])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from None

    @classmethod
    def load(cls, path) -> "NodeConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigInvalid(f"cannot read config {path}: {e}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
