"""
Experiment runner.

One function per management command. Seeds fan out over a thread pool;
every worker owns its environments, buffers and agent, and the results are
gathered in seed order before any aggregate file is written.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar, Union

import numpy as np
from django.conf import settings
from tqdm import tqdm

from baselines.exceptions import UnsupportedScenarioError
from baselines.oracle import OraclePolicy, optimal_throughput, oracle_table
from baselines.scratch import SCRATCH_UPDATE_EVERY, baseline_policy, pretrained_baseline
from channel.environment import (
    EnvConfig,
    MacEnvironment,
    TaskSpec,
    ThroughputSummary,
    ThroughputWindow,
    Transition,
)
from channel.exceptions import MetricDomainError
from channel.rewards import jain_index
from channel.simulator import ChannelSimulator, always, never, random_policy, write_trace
from harness.buffers import ContextBuffer
from harness.exceptions import MissingCheckpointError
from harness.policies import OnlineResult, periodic_steps, run_online
from harness.training import dynamic_run, load_agent, meta_test_finetune, meta_train, segment_summaries
from learner.agent import GmaAgent
from learner.checkpoint import META_FILE
from learner.encoder import ContextBatch
from learner.networks import child_seeds

from .presets import DEFAULT_DYNAMIC_PRESET, DEFAULT_TEST_PRESET, DEFAULT_TRAIN_PRESET, resolve_dynamic
from .records import (
    CsvAppender,
    RunRecord,
    latent_fieldnames,
    latent_row,
    mean_std,
    run_directory,
    slugify,
    write_config,
    write_curves,
    write_oracle_table,
)
from .serializers import ExperimentConfig


logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_SIMULATE_SLOTS = 10000
DYNAMIC_PRETRAIN_SLOTS = 2000
DYNAMIC_TAIL = 500

METRIC_FIELDS = ("t", "agentTx", "obs", "successNode", "S0", "SN", "sum", "jain")
TRAIN_CURVE_FIELDS = ("episode", "task", "slots", "S0", "SN", "sum", "jain")
LOSS_FIELDS = ("episode", "critic1", "critic2", "kl", "encoder", "actor", "temperature", "alpha")


def default_output_dir() -> Path:
    return Path(getattr(settings, "GMA_OUTPUT_DIR", "runs"))


def default_workers() -> int:
    return max(1, int(getattr(settings, "GMA_WORKERS", 1)))


def progress_enabled() -> bool:
    return bool(getattr(settings, "GMA_PROGRESS", True))


def run_seeds(
    fn: Callable[[int], T],
    seeds: Sequence[int],
    workers: Optional[int] = None,
    progress: bool = False,
    desc: str = "seeds",
) -> List[T]:
    """``fn(seed)`` for every seed, results in seed order."""
    workers = default_workers() if workers is None else workers
    seeds = list(seeds)
    if workers <= 1 or len(seeds) <= 1:
        return [fn(seed) for seed in tqdm(seeds, desc=desc, disable=not progress)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, seed) for seed in seeds]
        return [f.result() for f in tqdm(futures, desc=desc, disable=not progress)]


def _start(command: str, config: ExperimentConfig, root: Optional[Union[str, Path]]):
    root = root or config.output_dir or default_output_dir()
    directory = run_directory(root, command, config)
    write_config(directory, config)
    logger.info(f"Starting {command} (config {config.config_hash()[:12]}, seeds {config.seed_list()}) in {directory}")
    return directory, RunRecord.start(command, config, directory)


def _oracle(task: TaskSpec) -> Dict[str, Any]:
    try:
        result = optimal_throughput(task.scenario)
    except UnsupportedScenarioError as e:
        logger.warning(f"No oracle for {task.label}: {e.message}")
        return {"value": None, "kind": "unsupported"}
    return {"value": result.value, "kind": result.kind}


def _ratio(value: Optional[float], oracle: Optional[float]) -> Optional[float]:
    if value is None or not oracle:
        return None
    return value / oracle


def resolve_checkpoint(path: Optional[Union[str, Path]]) -> Path:
    """A checkpoint directory, or the first checkpoint of a ``meta_train`` run directory."""
    if not path:
        raise MissingCheckpointError("A checkpoint is required (--checkpoint)")
    path = Path(path)
    if (path / META_FILE).is_file():
        return path
    candidates = sorted(p.parent for p in path.glob(f"checkpoints/*/{META_FILE}"))
    if not candidates:
        raise MissingCheckpointError(f"No checkpoint at {path}", details={"path": str(path)})
    return candidates[0]


# ----- simulate -----

def fixed_policy(name: str, simulator: ChannelSimulator, seed: int) -> Callable[[int], bool]:
    if name == "always":
        return always
    if name == "never":
        return never
    if name == "random":
        return random_policy(0.5, seed)
    oracle = OraclePolicy.for_simulator(simulator)
    return lambda _t: bool(oracle.decide())


def simulate_experiment(
    config: ExperimentConfig,
    root: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> RunRecord:
    """
    Play a fixed agent policy against each scenario. Writes the slot trace
    (``trace-<task>.jsonl``) and the rolling throughput metrics
    (``metrics-<task>.csv``) slot by slot.
    """
    directory, record = _start("simulate", config, root)
    slots = DEFAULT_SIMULATE_SLOTS if config.slots is None else config.slots
    window_size = config.hyperparameters.throughput_window

    for task in config.task_specs():
        slug = slugify(task.label)
        simulator = ChannelSimulator(task.scenario, seed=config.seed)
        decide = fixed_policy(config.policy, simulator, config.seed)
        window = ThroughputWindow(window_size)
        totals = ThroughputSummary()

        with CsvAppender(directory / f"metrics-{slug}.csv", METRIC_FIELDS) as metrics:

            def play():
                for t in tqdm(range(slots), desc=task.label, disable=not progress):
                    outcome = simulator.step(decide(t))
                    agent_hit = outcome.success_node == 0
                    window.push(agent_hit, outcome.success_node is not None and not agent_hit)
                    totals.record(int(outcome.agent_transmitted), int(outcome.obs))
                    try:
                        jain = jain_index(window.s_agent, window.s_existing)
                    except MetricDomainError:
                        jain = None
                    metrics.write({
                        **outcome.to_record(t),
                        "S0": window.s_agent,
                        "SN": window.s_existing,
                        "sum": window.s_agent + window.s_existing,
                        "jain": jain,
                    })
                    yield outcome

            write_trace(play(), directory / f"trace-{slug}.jsonl")

        record.add_metric(directory / f"metrics-{slug}.csv")
        record.add_metric(directory / f"trace-{slug}.jsonl")
        record.summary[task.label] = {**totals.to_dict(), "policy": config.policy}
        logger.info(f"{task.label} with policy {config.policy}: sum throughput {totals.total:.4f} over {slots} slots")

    record.finish()
    return record


# ----- meta_train -----

def meta_train_experiment(
    config: ExperimentConfig,
    root: Optional[Union[str, Path]] = None,
    progress: bool = False,
    workers: Optional[int] = None,
) -> RunRecord:
    """Meta-train one agent per seed; checkpoints go to ``checkpoints/seed<n>/``."""
    directory, record = _start("meta_train", config, root)
    hyper = config.hyperparameters
    tasks = config.task_specs(DEFAULT_TRAIN_PRESET)
    schedule = hyper.schedule()
    env_config = hyper.env_config()
    learner_config = hyper.learner_config()
    seeds = config.seed_list()

    def train(seed: int) -> Dict[str, Any]:
        with CsvAppender(directory / f"curves-seed{seed}.csv", TRAIN_CURVE_FIELDS) as curves, \
                CsvAppender(directory / f"losses-seed{seed}.csv", LOSS_FIELDS) as losses:

            def on_episode(episode: int, rows: List[Dict[str, Any]], episode_losses: Dict[str, float]) -> None:
                for row in rows:
                    curves.write(row)
                if episode_losses:
                    losses.write({"episode": episode, **episode_losses})

            result = meta_train(
                tasks,
                schedule,
                seed=seed,
                env_config=env_config,
                learner_config=learner_config,
                progress=progress and len(seeds) == 1,
                on_episode=on_episode,
            )
        checkpoint = result.agent.save(
            directory / "checkpoints" / f"seed{seed}",
            extra={"tasks": [t.label for t in tasks], "config_hash": record.config_hash},
        )
        last = {}
        for row in result.curves:
            last[row["task"]] = row["sum"]
        return {"checkpoint": str(checkpoint), "final": last}

    outcomes = run_seeds(train, seeds, workers, progress and len(seeds) > 1, desc="meta-train seeds")
    for seed in seeds:
        record.add_metric(directory / f"curves-seed{seed}.csv")
        record.add_metric(directory / f"losses-seed{seed}.csv")
    record.checkpoints = [o["checkpoint"] for o in outcomes]

    for task in tasks:
        finals = [o["final"].get(task.label) for o in outcomes]
        oracle = _oracle(task)
        stats = mean_std(finals)
        record.summary[task.label] = {
            "finalSum": stats,
            "oracle": oracle["value"],
            "oracleKind": oracle["kind"],
            "oracleRatio": _ratio(stats["mean"], oracle["value"]),
        }
    record.finish()
    return record


# ----- meta_test -----

def baseline_run(
    name: str,
    task: TaskSpec,
    seed: int,
    config: ExperimentConfig,
) -> OnlineResult:
    """Scratch baseline on ``task`` with the meta-test slot budget, updated every 5 slots."""
    hyper = config.hyperparameters
    slots = hyper.test_slots
    policy_seed, env_seed = child_seeds(seed, 2)
    policy = baseline_policy(name, hyper.env_config(), policy_seed, hyper.learner_config(), hyper.dqn_config())
    env = MacEnvironment(task, hyper.env_config(), seed=env_seed)
    return run_online(env, policy, slots, periodic_steps(slots, SCRATCH_UPDATE_EVERY))


def meta_test_experiment(
    config: ExperimentConfig,
    root: Optional[Union[str, Path]] = None,
    progress: bool = False,
    workers: Optional[int] = None,
) -> RunRecord:
    """
    Adapt a meta-trained checkpoint to each test environment, one run per
    seed, and write ``curve-<task>.csv`` (mean and std per slot) plus the
    same for every requested baseline. ``dynamic`` runs the change schedule
    instead.
    """
    if config.dynamic:
        return dynamic_experiment(config, root, progress, workers)

    checkpoint = resolve_checkpoint(config.checkpoint)
    directory, record = _start("meta_test", config, root)
    hyper = config.hyperparameters
    schedule = hyper.schedule().zero_shot() if config.zero_shot else hyper.schedule()
    env_config = hyper.env_config()
    seeds = config.seed_list()
    record.checkpoints = [str(checkpoint)]

    for task in config.task_specs(DEFAULT_TEST_PRESET):
        slug = slugify(task.label)
        runs = run_seeds(
            lambda seed: meta_test_finetune(task, checkpoint, schedule, seed, env_config),
            seeds, workers, progress, desc=task.label,
        )
        record.add_metric(write_curves(directory / f"curve-{slug}.csv", [r.run for r in runs]))

        few_shot = [r.few_shot(schedule.few_shot_start) for r in runs]
        oracle = _oracle(task)
        stats = mean_std([s.total for s in few_shot])
        entry = {
            "oracle": oracle["value"],
            "oracleKind": oracle["kind"],
            "zeroShot": mean_std([r.zero_shot.total for r in runs]),
            "fewShot": stats,
            "fewShotJain": mean_std([s.jain for s in few_shot]),
            "oracleRatio": _ratio(stats["mean"], oracle["value"]),
            "updateSteps": list(runs[0].update_steps) if runs else [],
            "encoderFrozen": all(r.encoder_before == r.encoder_after for r in runs),
            "baselines": {},
        }

        for name in config.baselines:
            baseline_runs = run_seeds(
                lambda seed: baseline_run(name, task, seed, config),
                seeds, workers, progress, desc=f"{task.label} {name}",
            )
            record.add_metric(write_curves(directory / f"curve-{slug}-{name}.csv", baseline_runs))
            entry["baselines"][name] = {
                "fewShot": mean_std([r.summary(schedule.few_shot_start).total for r in baseline_runs]),
            }

        record.summary[task.label] = entry
        logger.info(f"{task.label}: few-shot sum throughput {stats['mean']} (oracle {oracle['value']})")

    record.finish()
    return record


def dynamic_experiment(
    config: ExperimentConfig,
    root: Optional[Union[str, Path]] = None,
    progress: bool = False,
    workers: Optional[int] = None,
) -> RunRecord:
    """Run the change schedule with the meta-trained agent and with pre-trained baselines."""
    checkpoint = resolve_checkpoint(config.checkpoint)
    directory, record = _start("meta_test", config, root)
    hyper = config.hyperparameters
    schedule = hyper.schedule()
    env_config = hyper.env_config()
    seeds = config.seed_list()
    segments, default_slots = resolve_dynamic(config.preset or DEFAULT_DYNAMIC_PRESET, hyper.nu)
    slots = default_slots if config.slots is None else config.slots
    record.checkpoints = [str(checkpoint)]

    runs = {
        "gma": run_seeds(
            lambda seed: dynamic_run(segments, checkpoint, slots, schedule, seed, env_config),
            seeds, workers, progress, desc="dynamic gma",
        )
    }

    def baseline_dynamic(name: str, seed: int) -> OnlineResult:
        policy = pretrained_baseline(
            name,
            env_config,
            DYNAMIC_PRETRAIN_SLOTS,
            seed=seed,
            learner_config=hyper.learner_config(),
            dqn_config=hyper.dqn_config(),
        )
        steps = periodic_steps(slots, schedule.dynamic_update_every)
        return dynamic_run(segments, policy, slots, schedule, seed, env_config, update_steps=steps)

    for name in config.baselines:
        runs[name] = run_seeds(
            lambda seed: baseline_dynamic(name, seed),
            seeds, workers, progress, desc=f"dynamic {name}",
        )

    for name, results in runs.items():
        suffix = "" if name == "gma" else f"-{name}"
        record.add_metric(write_curves(directory / f"dynamic{suffix}.csv", results))

    rows = []
    for i, segment in enumerate(segments):
        oracle = _oracle(segment.task)
        row = {"task": segment.task.label, "start": segment.start, "oracle": oracle["value"]}
        for name, results in runs.items():
            tails = [segment_summaries(run, segments, slots, DYNAMIC_TAIL)[i][1].total for run in results]
            stats = mean_std(tails)
            row[name] = {**stats, "oracleRatio": _ratio(stats["mean"], oracle["value"])}
        rows.append(row)
    record.summary = {"slots": slots, "segments": rows}
    record.finish()
    return record


# ----- oracle -----

def oracle_experiment(config: ExperimentConfig, root: Optional[Union[str, Path]] = None) -> RunRecord:
    """Oracle table for every scenario; unsupported rows are flagged, not fatal."""
    directory, record = _start("oracle", config, root)
    tasks = config.task_specs(DEFAULT_TEST_PRESET)
    rows = oracle_table([task.scenario for task in tasks])
    record.add_metric(write_oracle_table(directory / "oracle.csv", rows))
    record.summary = {row["scenario"]: {"value": row["value"], "kind": row["kind"]} for row in rows}
    record.finish()
    return record


# ----- export_latents -----

def rollout_context(
    agent: GmaAgent,
    task: TaskSpec,
    env_config: EnvConfig,
    steps: int,
    seed: int,
) -> ContextBatch:
    """``steps`` transitions played with one prior draw of ``z``."""
    env = MacEnvironment(task, env_config, seed=seed)
    state = env.reset()
    context = ContextBuffer(steps, width=agent.context_dim)
    z = agent.sample_latent(None)
    for _ in range(steps):
        action = int(agent.act(state, z).action[0])
        _, r, next_state = env.step(action)
        context.push(Transition(state, action, r, next_state))
        state = next_state
    return context.batch()


def export_latents_experiment(
    config: ExperimentConfig,
    root: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> RunRecord:
    """One ``{env, rollout, z..., w...}`` row per rollout and test environment."""
    checkpoint = resolve_checkpoint(config.checkpoint)
    directory, record = _start("export_latents", config, root)
    hyper = config.hyperparameters
    env_config = hyper.env_config()
    agent = load_agent(checkpoint, seed=config.seed)
    num_experts = agent.config.num_experts if agent.encoder is not None else 1
    tasks = config.task_specs(DEFAULT_TEST_PRESET)
    record.checkpoints = [str(checkpoint)]

    path = directory / "latents.csv"
    with CsvAppender(path, latent_fieldnames(agent.latent_dim, num_experts)) as out:
        for k, task in enumerate(tasks):
            for rollout in tqdm(range(config.rollouts), desc=task.label, disable=not progress):
                stream = np.random.SeedSequence(config.seed, spawn_key=(k, rollout))
                env_seed = int(stream.generate_state(1)[0])
                context = rollout_context(agent, task, env_config, hyper.context_size, env_seed)
                z, weights = agent.infer(context)
                out.write(latent_row(task.label, rollout, z, weights))
    record.add_metric(path)
    record.summary = {"rows": len(tasks) * config.rollouts, "environments": [t.label for t in tasks]}
    record.finish()
    return record
