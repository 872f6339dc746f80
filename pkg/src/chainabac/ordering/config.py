from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

from ..errors import ConfigInvalid

MODES = ("Solo", "Raft", "Kafka")


@dataclass(frozen=True)
class OrdererConfig:
    """Ordering service settings; durations are in seconds."""

    mode: str = "Solo"
    cluster_size: int = 1
    batch_max_count: int = 500
    batch_timeout: float = 0.25
    election_timeout_range: tuple[float, float] = (0.150, 0.300)
    heartbeat_interval: float = 0.050

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigInvalid(f"unknown orderer mode {self.mode!r}")
        if self.mode == "Raft" and not (1 <= self.cluster_size <= 7 and self.cluster_size % 2 == 1):
            raise ConfigInvalid("Raft cluster_size must be odd and between 1 and 7")
        if self.batch_max_count < 1:
            raise ConfigInvalid("batch_max_count must be at least 1")
        if self.batch_timeout <= 0:
            raise ConfigInvalid("batch_timeout must be positive")
        lo, hi = self.election_timeout_range
        if not 0 < lo <= hi:
            raise ConfigInvalid("election_timeout_range must satisfy 0 < min <= max")
        if not 0 < self.heartbeat_interval < lo:
            raise ConfigInvalid("heartbeat_interval must be below the minimum election timeout")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["election_timeout_range"] = list(self.election_timeout_range)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OrdererConfig":
        d = dict(d)
        if "election_timeout_range" in d:
            d["election_timeout_range"] = tuple(float(x) for x in d["election_timeout_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown orderer settings {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from None
