from .config import OrdererConfig
from .cutter import BlockCutter, cut_block
from .raft import LogEntry, RaftNode, RaftNodeState, Role
from .service import Ack, OrderedBatch, RaftOrderer, SoloOrderer, make_orderer
from .sim import NetworkConditions, Scheduler, SimNetwork, Trace

__all__ = [
    "Ack", "BlockCutter", "LogEntry", "NetworkConditions", "OrderedBatch", "OrdererConfig",
    "RaftNode", "RaftNodeState", "RaftOrderer", "Role", "Scheduler", "SimNetwork",
    "SoloOrderer", "Trace", "cut_block", "make_orderer",
]
