"""
Meta-training and meta-testing schedules.

``meta_train`` alternates a collection phase over every task of the
training set with a joint optimisation phase. ``meta_test_finetune``
adapts a trained checkpoint to one unseen task with a handful of updates
and a frozen encoder; ``dynamic_run`` does the same across scenario
changes without resetting the agent.
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from channel.environment import EnvConfig, MacEnvironment, TaskSpec, ThroughputSummary, Transition
from learner.agent import GmaAgent
from learner.checkpoint import META_FILE
from learner.config import LearnerConfig
from learner.encoder import ContextBatch
from learner.networks import child_seeds

from .buffers import ReplayBuffer
from .exceptions import HarnessUsageError, MissingCheckpointError
from .policies import AccessPolicy, GmaPolicy, OnlineResult, bounded_steps, run_online


logger = logging.getLogger(__name__)

AgentSource = Union[str, Path, GmaAgent]


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


@dataclass
class Schedule:
    """Step counts of meta-training, meta-testing and dynamic runs."""

    # Meta-training
    collect_steps: int = 200  # N_c per task per episode
    episodes: int = 50
    update_calls: int = 250
    batch_size: int = 64  # N_E
    context_size: int = 150  # U
    replay_capacity: int = 1000

    # Meta-testing
    test_collect_steps: int = 50
    finetune_steps: Tuple[int, ...] = (200, 250, 300)
    test_slots: int = 1000
    few_shot_start: int = 300

    # Dynamic runs
    dynamic_update_every: int = 50
    dynamic_updates: int = 16

    def __post_init__(self):
        self.finetune_steps = tuple(sorted(int(s) for s in self.finetune_steps))
        counts = {k: v for k, v in asdict(self).items() if isinstance(v, int)}
        negative = [k for k, v in counts.items() if v < 0]
        if negative or any(s < 0 for s in self.finetune_steps):
            raise HarnessUsageError("Schedule counts must be non-negative", details={"fields": negative})
        if self.batch_size < 1 or self.context_size < 1 or self.replay_capacity < 1:
            raise HarnessUsageError("Batch, context and replay sizes must be positive")

    @property
    def warmup_steps(self) -> int:
        """Meta-test slots collected before the first fine-tune update."""
        return 3 * self.test_collect_steps

    def zero_shot(self) -> "Schedule":
        return Schedule(**{**asdict(self), "finetune_steps": ()})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["finetune_steps"] = list(self.finetune_steps)
        return data

    @classmethod
    def from_env(cls) -> "Schedule":
        return cls(
            collect_steps=_env_int("GMA_COLLECT_STEPS", 200),
            episodes=_env_int("GMA_EPISODES", 50),
            update_calls=_env_int("GMA_UPDATE_CALLS", 250),
            batch_size=_env_int("GMA_BATCH_SIZE", 64),
            context_size=_env_int("GMA_CONTEXT_SIZE", 150),
            replay_capacity=_env_int("GMA_REPLAY_CAPACITY", 1000),
            test_collect_steps=_env_int("GMA_TEST_COLLECT_STEPS", 50),
        )


# ----- meta-training -----

def collect_phase(
    agent: GmaAgent,
    env: MacEnvironment,
    buffer: ReplayBuffer,
    steps: int,
    context_size: int,
) -> ThroughputSummary:
    """
    Reset ``env`` and append ``steps`` transitions to ``buffer``. The first
    action uses ``z`` from the prior; after every step ``z`` is re-drawn
    from the latest ``context_size`` transitions of this phase.
    """
    summary = ThroughputSummary()
    state = env.reset()
    collected: List[Transition] = []
    z = agent.sample_latent(None)
    for _ in range(steps):
        action = int(agent.act(state, z).action[0])
        obs, r, next_state = env.step(action)
        transition = Transition(state, action, r, next_state)
        buffer.append(transition)
        collected.append(transition)
        summary.record(action, obs)
        state = next_state
        z = agent.sample_latent(ContextBatch.from_transitions(collected[-context_size:]))
    return summary


def sample_task_batches(
    buffers: Sequence[ReplayBuffer],
    schedule: Schedule,
    rng: np.random.Generator,
):
    """
    One ``(context, batch)`` pair per task buffer holding at least ``N_E``
    transitions. The context is the newest ``context_size`` transitions, so it
    comes from the latest collection phase; the batch is drawn uniformly.
    """
    task_batches = []
    for buffer in buffers:
        if len(buffer) < schedule.batch_size:
            continue
        context = ContextBatch.from_transitions(buffer.latest(schedule.context_size))
        task_batches.append((context, buffer.sample_batch(schedule.batch_size, rng)))
    return task_batches


def optimize_phase(
    agent: GmaAgent,
    buffers: Sequence[ReplayBuffer],
    schedule: Schedule,
    rng: np.random.Generator,
) -> List[Dict[str, float]]:
    """Run ``schedule.update_calls`` joint gradient steps over all task buffers."""
    underfilled = [k for k, b in enumerate(buffers) if len(b) < schedule.batch_size]
    if underfilled:
        logger.warning(f"Skipping tasks {underfilled}: fewer than {schedule.batch_size} transitions buffered")
    if len(underfilled) == len(buffers):
        return []

    losses = []
    for _ in range(schedule.update_calls):
        losses.append(agent.update(sample_task_batches(buffers, schedule, rng)))
    return losses


@dataclass
class MetaTrainResult:
    agent: GmaAgent
    curves: List[Dict[str, Any]] = field(default_factory=list)
    losses: List[Dict[str, Any]] = field(default_factory=list)


def _mean_losses(losses: List[Dict[str, float]]) -> Dict[str, float]:
    if not losses:
        return {}
    return {key: float(np.mean([l[key] for l in losses])) for key in losses[0]}


def meta_train(
    tasks: Sequence[TaskSpec],
    schedule: Optional[Schedule] = None,
    seed: int = 0,
    env_config: Optional[EnvConfig] = None,
    learner_config: Optional[LearnerConfig] = None,
    agent: Optional[GmaAgent] = None,
    progress: bool = False,
    on_episode: Optional[Callable[[int, List[Dict[str, Any]], Dict[str, float]], None]] = None,
) -> MetaTrainResult:
    """
    Alternate collection over all tasks and joint optimisation for
    ``schedule.episodes`` episodes. ``curves`` holds one record per task and
    episode with the sum throughput and Jain index of its collection phase.
    """
    if not tasks:
        raise HarnessUsageError("Meta-training needs at least one task")
    schedule = schedule or Schedule()
    env_config = env_config or EnvConfig()
    agent_seed, data_seed, env_seed = child_seeds(seed, 3)
    if agent is None:
        agent = GmaAgent(env_config.state_dim, env_config.context_dim, learner_config, seed=agent_seed)
    rng = np.random.default_rng(data_seed)
    buffers = [ReplayBuffer(schedule.replay_capacity) for _ in tasks]
    result = MetaTrainResult(agent=agent)

    logger.info(f"Meta-training on {len(tasks)} tasks for {schedule.episodes} episodes (seed {seed})")
    for episode in tqdm(range(schedule.episodes), desc="meta-train", disable=not progress):
        records = []
        for k, (task, buffer) in enumerate(zip(tasks, buffers)):
            env_stream = np.random.SeedSequence(env_seed, spawn_key=(episode, k))
            env = MacEnvironment(task, env_config, seed=int(env_stream.generate_state(1)[0]))
            summary = collect_phase(agent, env, buffer, schedule.collect_steps, schedule.context_size)
            records.append({"episode": episode, "task": task.label, **summary.to_dict()})

        episode_losses = _mean_losses(optimize_phase(agent, buffers, schedule, rng))
        result.curves.extend(records)
        if episode_losses:
            result.losses.append({"episode": episode, **episode_losses})
        logger.info(
            f"Episode {episode}: mean sum throughput "
            f"{np.mean([r['sum'] for r in records]):.3f}, alpha {agent.nets.alpha:.4f}"
        )
        if on_episode is not None:
            on_episode(episode, records, episode_losses)
    return result


# ----- meta-testing -----

def load_agent(source: AgentSource, seed: Optional[int] = None) -> GmaAgent:
    """Agent restored from a checkpoint directory; agents pass through."""
    if isinstance(source, GmaAgent):
        return source
    path = Path(source)
    if not (path / META_FILE).is_file():
        raise MissingCheckpointError(f"No checkpoint at {path}", details={"path": str(path)})
    return GmaAgent.load(path, seed=seed)


@dataclass
class AdaptationResult:
    run: OnlineResult
    update_steps: Tuple[int, ...]
    encoder_before: Optional[str]
    encoder_after: Optional[str]

    @property
    def zero_shot(self) -> ThroughputSummary:
        """Throughput of the slots played before the first update."""
        end = self.update_steps[0] if self.update_steps else None
        return self.run.summary(0, end)

    def few_shot(self, start: int = 300, end: Optional[int] = None) -> ThroughputSummary:
        return self.run.summary(start, end)


def effective_finetune_steps(schedule: Schedule) -> Tuple[int, ...]:
    """Fine-tune steps that fall after the warmup; earlier ones are dropped."""
    early = [s for s in schedule.finetune_steps if s < schedule.warmup_steps]
    if early:
        logger.warning(f"Ignoring fine-tune steps {early} inside the {schedule.warmup_steps}-slot warmup")
    return tuple(s for s in schedule.finetune_steps if s >= schedule.warmup_steps and s <= schedule.test_slots)


def meta_test_finetune(
    task: TaskSpec,
    checkpoint: AgentSource,
    schedule: Optional[Schedule] = None,
    seed: int = 0,
    env_config: Optional[EnvConfig] = None,
    progress: bool = False,
) -> AdaptationResult:
    """
    Play ``schedule.test_slots`` slots of ``task`` with the meta-trained
    policy, re-drawing ``z`` from the growing context every slot and
    fine-tuning once at each step of ``schedule.finetune_steps``.
    """
    schedule = schedule or Schedule()
    env_config = env_config or EnvConfig()
    policy_seed, env_seed = child_seeds(seed, 2)
    agent = load_agent(checkpoint, seed=policy_seed)
    agent.reset_temperature()
    steps = effective_finetune_steps(schedule)

    policy = GmaPolicy(
        agent,
        context_size=schedule.context_size,
        replay_capacity=schedule.replay_capacity,
        batch_size=schedule.batch_size,
        seed=policy_seed,
    )
    env = MacEnvironment(task, env_config, seed=env_seed)
    before = agent.encoder_fingerprint()
    run = run_online(env, policy, schedule.test_slots, steps, progress=progress)
    after = agent.encoder_fingerprint()
    logger.info(
        f"Meta-test on {task.label}: {len(run.updates)} updates, "
        f"sum throughput {run.summary(schedule.few_shot_start).total:.3f} after slot {schedule.few_shot_start}"
    )
    return AdaptationResult(run=run, update_steps=steps, encoder_before=before, encoder_after=after)


@dataclass(frozen=True)
class DynamicSegment:
    """A task that takes over the channel at slot ``start``."""

    start: int
    task: TaskSpec


def dynamic_run(
    segments: Sequence[DynamicSegment],
    policy: Union[AccessPolicy, AgentSource],
    slots: int,
    schedule: Optional[Schedule] = None,
    seed: int = 0,
    env_config: Optional[EnvConfig] = None,
    update_steps: Optional[Sequence[int]] = None,
    progress: bool = False,
) -> OnlineResult:
    """
    One continuous run across scenario changes. The first segment must start
    at slot 0; every later one hot-swaps the existing nodes and clears the
    policy's context. A checkpoint or agent is wrapped in a ``GmaPolicy``
    whose updates default to ``dynamic_updates`` steps spaced
    ``dynamic_update_every`` slots after each change.
    """
    schedule = schedule or Schedule()
    env_config = env_config or EnvConfig()
    segments = list(segments)
    starts = [s.start for s in segments]
    if not segments or starts[0] != 0 or starts != sorted(set(starts)):
        raise HarnessUsageError("Segments must start at slot 0 with strictly increasing change points")

    policy_seed, env_seed = child_seeds(seed, 2)
    if not isinstance(policy, AccessPolicy):
        agent = load_agent(policy, seed=policy_seed)
        agent.reset_temperature()
        policy = GmaPolicy(
            agent,
            context_size=schedule.context_size,
            replay_capacity=schedule.replay_capacity,
            batch_size=schedule.batch_size,
            seed=policy_seed,
        )
    if update_steps is None:
        update_steps = bounded_steps(starts[1:], slots, schedule.dynamic_update_every, schedule.dynamic_updates)

    env = MacEnvironment(segments[0].task, env_config, seed=env_seed)
    changes = {s.start: s.task for s in segments[1:]}
    return run_online(env, policy, slots, update_steps, changes, progress=progress)


def segment_summaries(run: OnlineResult, segments: Sequence[DynamicSegment], slots: int, tail: int = 500):
    """Throughput over the last ``tail`` slots of every segment."""
    summaries = []
    for i, segment in enumerate(segments):
        end = segments[i + 1].start if i + 1 < len(segments) else slots
        summaries.append((segment.task.label, run.summary(max(segment.start, end - tail), end)))
    return summaries
