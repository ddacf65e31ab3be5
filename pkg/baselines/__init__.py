"""
Baselines Package.

Scratch-trained access learners (DQN, encoder-free SAC) and the
optimal-throughput oracles used as benchmark lines.
"""

from .exceptions import UnsupportedScenarioError
from .oracle import (
    OracleResult,
    GenieSolution,
    JointStateSpace,
    OraclePolicy,
    optimal_throughput,
    genie_value,
    solve_genie,
    oracle_table,
)
from .dqn import DqnConfig, DqnAgent, DqnPolicy, dqn_train
from .scratch import (
    sac_scratch_train,
    scratch_sac_policy,
    baseline_policy,
    pretrained_baseline,
)


__all__ = [
    # Exceptions
    "UnsupportedScenarioError",

    # Oracles
    "OracleResult",
    "GenieSolution",
    "JointStateSpace",
    "OraclePolicy",
    "optimal_throughput",
    "genie_value",
    "solve_genie",
    "oracle_table",

    # Learners
    "DqnConfig",
    "DqnAgent",
    "DqnPolicy",
    "dqn_train",
    "sac_scratch_train",
    "scratch_sac_policy",
    "baseline_policy",
    "pretrained_baseline",
]
