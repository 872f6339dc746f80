"""Transaction handlers, commit pipeline and the access gateway."""

from .committer import CommitResult, Committer
from .config import DEFAULT_SOCKET_ENV, EndorsementPolicy, NodeConfig
from .gateway import AccessService
from .handlers import policy_digest, sign_policy

__all__ = ["AccessService", "CommitResult", "Committer", "DEFAULT_SOCKET_ENV",
           "EndorsementPolicy", "NodeConfig", "policy_digest", "sign_policy"]
