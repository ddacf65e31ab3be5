"""
Harness Package.

Replay and context buffers, the online slot loop shared by every access
policy, and the meta-training / meta-testing schedules.
"""

from .exceptions import HarnessUsageError, MissingCheckpointError
from .buffers import ReplayBuffer, ContextBuffer
from .policies import (
    AccessPolicy,
    GmaPolicy,
    OnlineResult,
    run_online,
    periodic_steps,
    bounded_steps,
)
from .training import (
    Schedule,
    MetaTrainResult,
    AdaptationResult,
    DynamicSegment,
    collect_phase,
    optimize_phase,
    meta_train,
    load_agent,
    meta_test_finetune,
    dynamic_run,
    segment_summaries,
)


__all__ = [
    # Exceptions
    "HarnessUsageError",
    "MissingCheckpointError",

    # Buffers
    "ReplayBuffer",
    "ContextBuffer",

    # Online loop
    "AccessPolicy",
    "GmaPolicy",
    "OnlineResult",
    "run_online",
    "periodic_steps",
    "bounded_steps",

    # Schedules
    "Schedule",
    "MetaTrainResult",
    "AdaptationResult",
    "DynamicSegment",
    "collect_phase",
    "optimize_phase",
    "meta_train",
    "load_agent",
    "meta_test_finetune",
    "dynamic_run",
    "segment_summaries",
]
