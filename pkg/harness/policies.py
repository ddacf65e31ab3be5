"""
Online access policies and the slot loop that drives them.

Every learner that plays the channel (the GMA agent during meta-testing,
the scratch baselines, the oracle) implements ``AccessPolicy``;
``run_online`` plays it against a ``MacEnvironment``, triggers updates at
the requested slots and hot-swaps scenarios at change points.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
from tqdm import tqdm

from channel.environment import MacEnvironment, TaskSpec, ThroughputSummary, Transition
from learner.agent import GmaAgent

from .buffers import DEFAULT_CONTEXT_SIZE, DEFAULT_REPLAY_CAPACITY, ContextBuffer, ReplayBuffer


logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 64


@runtime_checkable
class AccessPolicy(Protocol):
    """A channel-access decision maker that may learn online."""

    def reset_context(self) -> None:
        ...

    def act(self, state: np.ndarray, t: int) -> int:
        ...

    def observe(self, transition: Transition) -> None:
        ...

    def update(self) -> Dict[str, float]:
        ...


class GmaPolicy:
    """
    Meta-trained agent acting with ``z`` re-drawn every slot from the
    current context (the prior while it is empty). Updates fine-tune the
    actor, critics and temperature from the replay buffer; the encoder is
    never touched. An agent built without an encoder makes this plain SAC.
    """

    def __init__(
        self,
        agent: GmaAgent,
        context_size: int = DEFAULT_CONTEXT_SIZE,
        replay_capacity: int = DEFAULT_REPLAY_CAPACITY,
        batch_size: int = DEFAULT_BATCH_SIZE,
        seed: int = 0,
        deterministic: bool = False,
    ):
        self.agent = agent
        self.context = ContextBuffer(context_size, width=agent.context_dim)
        self.replay = ReplayBuffer(replay_capacity)
        self.batch_size = batch_size
        self.deterministic = deterministic
        self.rng = np.random.default_rng(seed)
        self.last_latent: Optional[np.ndarray] = None

    def reset_context(self) -> None:
        self.context.clear()

    def current_context(self):
        return self.context.batch() if len(self.context) else None

    def act(self, state: np.ndarray, t: int) -> int:
        z = self.agent.sample_latent(self.current_context(), self.deterministic)
        self.last_latent = z
        return int(self.agent.act(state, z, self.deterministic).action[0])

    def observe(self, transition: Transition) -> None:
        self.replay.append(transition)
        self.context.push(transition)

    def update(self) -> Dict[str, float]:
        if len(self.replay) < self.batch_size:
            logger.warning(
                f"Skipping fine-tune update: replay holds {len(self.replay)} < {self.batch_size} transitions"
            )
            return {}
        batch = self.replay.sample_batch(self.batch_size, self.rng)
        return self.agent.finetune_update(self.current_context(), batch)


@dataclass
class OnlineResult:
    """Per-slot records of one online run plus the losses of its updates."""

    label: str
    records: List[Dict[str, Any]] = field(default_factory=list)
    updates: List[Dict[str, Any]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def summary(self, start: int = 0, end: Optional[int] = None) -> ThroughputSummary:
        """Success fractions over slots ``[start, end)``."""
        totals = ThroughputSummary()
        for record in self.records[start:end]:
            totals.record(record["a"], record["obs"])
        return totals

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.records], dtype=np.float64)


def run_online(
    env: MacEnvironment,
    policy: AccessPolicy,
    slots: int,
    update_steps: Iterable[int] = (),
    changes: Optional[Mapping[int, TaskSpec]] = None,
    progress: bool = False,
) -> OnlineResult:
    """
    Play ``slots`` slots. After the slot that brings the count to a member
    of ``update_steps`` the policy performs one update; at a slot index in
    ``changes`` the existing nodes are swapped and the policy's context is
    cleared before it acts.
    """
    update_steps = set(int(s) for s in update_steps)
    changes = dict(changes or {})
    if not env.is_reset:
        env.reset()
    result = OnlineResult(label=env.task.label)

    state = env.state
    for _ in tqdm(range(slots), desc=env.task.label, disable=not progress, leave=False):
        t = env.t
        if t in changes:
            task = changes[t]
            env.swap_scenario(task.scenario, label=task.label)
            policy.reset_context()
            logger.info(f"Scenario changed to {task.label} at slot {t}")

        action = policy.act(state, t)
        obs, r, next_state = env.step(action)
        policy.observe(Transition(state, action, r, next_state))
        state = next_state

        record = env.metrics()
        record.update({"a": action, "obs": obs, "r": r, "task": env.task.label})
        result.records.append(record)

        if env.t in update_steps:
            losses = policy.update()
            if losses:
                result.updates.append({"t": env.t, **losses})
                logger.debug(f"Update at slot {env.t}: {losses}")
    return result


def periodic_steps(slots: int, every: int, start: int = 0) -> List[int]:
    """Update steps ``start + every, start + 2 * every, ...`` up to ``slots``."""
    if every <= 0:
        return []
    return list(range(start + every, slots + 1, every))


def bounded_steps(change_points: Sequence[int], slots: int, every: int, count: int) -> List[int]:
    """``count`` updates spaced ``every`` slots after each change point, clipped to the next one."""
    points = sorted(set([0, *change_points]))
    steps = []
    for i, start in enumerate(points):
        end = points[i + 1] if i + 1 < len(points) else slots
        steps.extend(s for s in periodic_steps(end, every, start)[:count])
    return steps
