"""
DQN access baseline.

A Q network over the same action/observation history the GMA agent sees,
epsilon-greedy exploration with a linear decay, a periodically synced
target network and squared TD loss. Trained from scratch on one task.
"""

import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from channel.environment import EnvConfig, MacEnvironment, TaskSpec, Transition
from harness.buffers import ReplayBuffer
from harness.policies import OnlineResult, periodic_steps, run_online
from learner import autograd as ag
from learner.autograd import GradientTape, ParamStore, adam_step
from learner.networks import NetSpec, child_seeds, forward, init_params
from learner.sac import TransitionBatch


logger = logging.getLogger(__name__)


@dataclass
class DqnConfig:
    """Q-learning settings; the network mirrors the critic width of the GMA agent."""

    hidden_size: int = 64
    gamma: float = 0.9
    lr: float = 0.003
    batch_size: int = 64
    replay_capacity: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 500
    target_sync: int = 20  # updates between hard target copies
    update_every: int = 5  # slots between updates in online mode

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_env(cls) -> "DqnConfig":
        return cls(
            hidden_size=int(os.getenv("GMA_HIDDEN_SIZE", "64")),
            gamma=float(os.getenv("GMA_GAMMA", "0.9")),
            lr=float(os.getenv("GMA_LR", "0.003")),
            epsilon_decay_steps=int(os.getenv("GMA_DQN_EPSILON_DECAY", "500")),
            target_sync=int(os.getenv("GMA_DQN_TARGET_SYNC", "20")),
        )


class DqnAgent:
    def __init__(self, state_dim: int, config: Optional[DqnConfig] = None, seed: int = 0):
        self.config = config or DqnConfig()
        self.spec = NetSpec(state_dim, (self.config.hidden_size, self.config.hidden_size), 2)
        net_seed, rng_seed = child_seeds(seed, 2)
        self.online = init_params(self.spec, net_seed)
        self.target = ParamStore(self.online.params)
        self.rng = np.random.default_rng(rng_seed)
        self.steps = 0
        self.updates = 0

    @property
    def epsilon(self) -> float:
        cfg = self.config
        if cfg.epsilon_decay_steps <= 0:
            return cfg.epsilon_end
        fraction = min(1.0, self.steps / cfg.epsilon_decay_steps)
        return cfg.epsilon_start + fraction * (cfg.epsilon_end - cfg.epsilon_start)

    def q_values(self, states: np.ndarray, store: Optional[ParamStore] = None) -> np.ndarray:
        states = np.atleast_2d(states)
        return forward(self.spec, store or self.online, states).value

    def greedy(self, state: np.ndarray) -> int:
        """Argmax over the two Q-values; ties go to staying silent."""
        q = self.q_values(state)[0]
        return int(q[1] > q[0])

    def act(self, state: np.ndarray, explore: bool = True) -> int:
        self.steps += 1
        if explore and self.rng.random() < self.epsilon:
            return int(self.rng.integers(0, 2))
        return self.greedy(state)

    def td_targets(self, batch: TransitionBatch) -> np.ndarray:
        """``y = r + gamma * max_a' Q_target(s', a')``."""
        next_q = self.q_values(batch.next_states, self.target)
        return batch.rewards + self.config.gamma * next_q.max(axis=1)

    def loss(self, batch: TransitionBatch, targets: np.ndarray, tape: Optional[GradientTape] = None) -> ag.Variable:
        q = forward(self.spec, self.online, batch.states, tape)
        chosen = ag.reduce_sum(q * np.eye(2)[batch.actions], axis=1)
        return ag.reduce_mean(ag.square(chosen - targets))

    def update(self, batch: TransitionBatch) -> float:
        """One squared-TD gradient step; syncs the target every ``target_sync`` updates."""
        targets = self.td_targets(batch)
        self.online.zero_grad()
        tape = GradientTape()
        loss = self.loss(batch, targets, tape)
        ag.check_finite("dqn loss", loss)
        tape.backward(loss)
        adam_step(self.online, lr=self.config.lr)
        self.updates += 1
        if self.config.target_sync > 0 and self.updates % self.config.target_sync == 0:
            self.target = ParamStore(self.online.params)
        return loss.item()


class DqnPolicy:
    """Online DQN learner usable by ``run_online``."""

    def __init__(self, agent: DqnAgent, seed: int = 0, explore: bool = True):
        self.agent = agent
        self.replay = ReplayBuffer(agent.config.replay_capacity)
        self.rng = np.random.default_rng(seed)
        self.explore = explore

    def reset_context(self) -> None:
        pass

    def act(self, state: np.ndarray, t: int) -> int:
        return self.agent.act(state, self.explore)

    def observe(self, transition: Transition) -> None:
        self.replay.append(transition)

    def update(self) -> Dict[str, float]:
        if len(self.replay) < self.agent.config.batch_size:
            return {}
        batch = self.replay.sample_batch(self.agent.config.batch_size, self.rng)
        return {"td": self.agent.update(batch), "epsilon": self.agent.epsilon}


def dqn_train(
    task: TaskSpec,
    config: Optional[DqnConfig] = None,
    seed: int = 0,
    slots: int = 1000,
    env_config: Optional[EnvConfig] = None,
    progress: bool = False,
) -> Tuple[DqnPolicy, OnlineResult]:
    """Learn ``task`` from scratch, updating every ``config.update_every`` slots."""
    config = config or DqnConfig()
    env_config = env_config or EnvConfig()
    agent_seed, policy_seed, env_seed = child_seeds(seed, 3)
    policy = DqnPolicy(DqnAgent(env_config.state_dim, config, agent_seed), seed=policy_seed)
    env = MacEnvironment(task, env_config, seed=env_seed)
    result = run_online(env, policy, slots, periodic_steps(slots, config.update_every), progress=progress)
    logger.info(f"DQN on {task.label}: sum throughput {result.summary().total:.3f} over {slots} slots")
    return policy, result
