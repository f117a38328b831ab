"""Parallel sliding-window stream join over a shared-nothing cluster.

Hash-partitioned tuple distribution from a master node, epoch-synchronized
slave communication, supplier/consumer load diffusion, extendible-hashing
partition fine-tuning, and an adaptive degree of declustering, with a
deterministic simulation backend and a socket backend.
"""

from .config import RunConfig, load_config
from .core import (
    S1,
    S2,
    Tuple,
    WindowSpec,
    hash_partition,
    pair_within_windows,
    window_membership,
)
from .engine import JoinEngine
from .errors import ConfigError, MetricsError, ProtocolError, SlotViolation, StreamJoinError
from .extendible import ExtendibleDirectory, buddy_entry
from .master import (
    DeclusterAction,
    MoveInstruction,
    NodeState,
    Role,
    adjust_declustering,
    classify_slaves,
    plan_reorganization,
    predicted_peak_buffer,
)
from .metrics import JoinResult, RunMetrics, production_delay
from .oracle import sliding_join_reference
from .runner import RunArtifacts, Scenario, run_simulation, run_socket, run_sweep
from .workload import WorkloadConfig, next_interarrival, next_key

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config",
    "S1", "S2", "Tuple", "WindowSpec", "hash_partition",
    "pair_within_windows", "window_membership",
    "JoinEngine", "ExtendibleDirectory", "buddy_entry",
    "StreamJoinError", "ConfigError", "ProtocolError", "SlotViolation", "MetricsError",
    "DeclusterAction", "MoveInstruction", "NodeState", "Role",
    "adjust_declustering", "classify_slaves", "plan_reorganization",
    "predicted_peak_buffer",
    "JoinResult", "RunMetrics", "production_delay",
    "sliding_join_reference",
    "RunArtifacts", "Scenario", "run_simulation", "run_socket", "run_sweep",
    "WorkloadConfig", "next_interarrival", "next_key",
    "__version__",
]
