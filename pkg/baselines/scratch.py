"""
Scratch-trained baselines: SAC without a task encoder and the factory
that builds any baseline policy by name for meta-test comparisons and
dynamic runs.
"""

import logging
from typing import Optional, Tuple

from channel.environment import EnvConfig, MacEnvironment, TaskSpec
from harness.exceptions import HarnessUsageError
from harness.policies import AccessPolicy, GmaPolicy, OnlineResult, periodic_steps, run_online
from learner.agent import GmaAgent
from learner.config import LearnerConfig
from learner.networks import child_seeds

from .dqn import DqnAgent, DqnConfig, DqnPolicy


logger = logging.getLogger(__name__)

BASELINES = ("dqn", "sac")
SCRATCH_UPDATE_EVERY = 5
PRETRAIN_TASK = "tdma:7"


def scratch_sac_policy(
    env_config: EnvConfig,
    learner_config: Optional[LearnerConfig] = None,
    seed: int = 0,
    batch_size: int = 64,
    replay_capacity: int = 1000,
) -> GmaPolicy:
    agent_seed, policy_seed = child_seeds(seed, 2)
    agent = GmaAgent(env_config.state_dim, env_config.context_dim, learner_config, seed=agent_seed, use_encoder=False)
    return GmaPolicy(agent, replay_capacity=replay_capacity, batch_size=batch_size, seed=policy_seed)


def sac_scratch_train(
    task: TaskSpec,
    seed: int = 0,
    slots: int = 1000,
    env_config: Optional[EnvConfig] = None,
    learner_config: Optional[LearnerConfig] = None,
    update_every: int = SCRATCH_UPDATE_EVERY,
    progress: bool = False,
) -> Tuple[GmaPolicy, OnlineResult]:
    """SAC with a zero-width task representation, updated every ``update_every`` slots."""
    env_config = env_config or EnvConfig()
    policy_seed, env_seed = child_seeds(seed, 2)
    policy = scratch_sac_policy(env_config, learner_config, policy_seed)
    env = MacEnvironment(task, env_config, seed=env_seed)
    result = run_online(env, policy, slots, periodic_steps(slots, update_every), progress=progress)
    logger.info(f"Scratch SAC on {task.label}: sum throughput {result.summary().total:.3f} over {slots} slots")
    return policy, result


def baseline_policy(
    name: str,
    env_config: EnvConfig,
    seed: int = 0,
    learner_config: Optional[LearnerConfig] = None,
    dqn_config: Optional[DqnConfig] = None,
) -> AccessPolicy:
    """Fresh baseline learner by name (``dqn`` or ``sac``)."""
    if name == "dqn":
        agent_seed, policy_seed = child_seeds(seed, 2)
        return DqnPolicy(DqnAgent(env_config.state_dim, dqn_config, agent_seed), seed=policy_seed)
    if name == "sac":
        return scratch_sac_policy(env_config, learner_config, seed)
    raise HarnessUsageError(f"Unknown baseline {name!r}", details={"known": list(BASELINES)})


def pretrained_baseline(
    name: str,
    env_config: EnvConfig,
    slots: int,
    seed: int = 0,
    task: Optional[TaskSpec] = None,
    update_every: int = SCRATCH_UPDATE_EVERY,
    learner_config: Optional[LearnerConfig] = None,
    dqn_config: Optional[DqnConfig] = None,
) -> AccessPolicy:
    """Baseline trained on ``task`` (TDMA(7) by default) before a dynamic run."""
    task = task or TaskSpec.from_string(PRETRAIN_TASK)
    policy_seed, env_seed = child_seeds(seed, 2)
    policy = baseline_policy(name, env_config, policy_seed, learner_config, dqn_config)
    env = MacEnvironment(task, env_config, seed=env_seed)
    result = run_online(env, policy, slots, periodic_steps(slots, update_every))
    logger.info(f"Pre-trained {name} on {task.label}: sum throughput {result.summary().total:.3f}")
    return policy
