"""
End-to-end reproduction benches. Each one meta-trains agents at the
default hyperparameters and takes from minutes to an hour of CPU, so they
only run with ``GMA_RUN_SLOW=1``; ``GMA_ACCEPT_EPISODES`` shortens
meta-training.
"""

import os
import tempfile
import unittest
from pathlib import Path
from typing import Dict, List

import numpy as np
from django.test import SimpleTestCase

from baselines.oracle import optimal_throughput
from baselines.scratch import pretrained_baseline, sac_scratch_train
from channel.environment import EnvConfig, TaskSpec
from harness.policies import periodic_steps
from harness.training import Schedule, dynamic_run, meta_test_finetune, meta_train, segment_summaries
from learner.config import LearnerConfig

from .presets import resolve_dynamic, resolve_tasks


SLOW = os.getenv("GMA_RUN_SLOW") == "1"
EPISODES = int(os.getenv("GMA_ACCEPT_EPISODES", "50"))


def _oracle(task: TaskSpec) -> float:
    return optimal_throughput(task.scenario).value


def _train(directory: Path, name: str, tasks: List[TaskSpec], seed: int, learner: LearnerConfig = None) -> Path:
    result = meta_train(tasks, Schedule(episodes=EPISODES), seed=seed, learner_config=learner)
    return result.agent.save(directory / name)


def _few_shot(checkpoint: Path, task: TaskSpec, seed: int, schedule: Schedule) -> float:
    return meta_test_finetune(task, checkpoint, schedule, seed).few_shot(schedule.few_shot_start).total


@unittest.skipUnless(SLOW, "set GMA_RUN_SLOW=1 to run the reproduction benches")
class ReproductionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        cls.train_tasks = resolve_tasks("trainset-8")
        cls.test_tasks = resolve_tasks("testset-6")
        cls.checkpoints = [_train(cls.root, f"gma-{seed}", cls.train_tasks, seed) for seed in range(5)]

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def test_training_environments_reach_oracle(self):
        schedule = Schedule().zero_shot()
        for task in self.train_tasks:
            values = [_few_shot(checkpoint, task, seed, schedule) for seed, checkpoint in enumerate(self.checkpoints)]
            self.assertGreaterEqual(np.median(values), 0.85 * _oracle(task), msg=task.label)

    def test_few_shot_adaptation(self):
        schedule = Schedule()
        passed = []
        for task in self.test_tasks:
            gma = np.median([_few_shot(self.checkpoints[0], task, seed, schedule) for seed in range(10)])
            scratch = np.median([
                sac_scratch_train(task, seed=seed, slots=schedule.test_slots)[1].summary(schedule.few_shot_start).total
                for seed in range(10)
            ])
            if gma >= 0.8 * _oracle(task) and gma >= scratch:
                passed.append(task.label)
        self.assertGreaterEqual(len(passed), 5, msg=passed)

    def test_dynamic_environment(self):
        schedule = Schedule()
        segments, slots = resolve_dynamic("dynamic-4")
        oracles = [_oracle(s.task) for s in segments]

        def tail_ratios(runs) -> np.ndarray:
            tails = [[s.total for _, s in segment_summaries(run, segments, slots)] for run in runs]
            return np.median(np.array(tails), axis=0) / np.array(oracles)

        gma_runs = [dynamic_run(segments, self.checkpoints[0], slots, schedule, seed) for seed in range(10)]
        self.assertTrue(np.all(tail_ratios(gma_runs) >= 0.75), msg=tail_ratios(gma_runs))

        for name in ("dqn", "sac"):
            runs = []
            for seed in range(10):
                policy = pretrained_baseline(name, EnvConfig(), 2000, seed=seed)
                steps = periodic_steps(slots, schedule.dynamic_update_every)
                runs.append(dynamic_run(segments, policy, slots, schedule, seed, update_steps=steps))
            self.assertTrue(np.any(tail_ratios(runs) < 0.75), msg=name)

    def test_more_experts_do_not_hurt_zero_shot(self):
        schedule = Schedule().zero_shot()
        medians: Dict[int, float] = {}
        for experts in (1, 3):
            checkpoint = _train(self.root, f"experts-{experts}", self.train_tasks, 0, LearnerConfig(num_experts=experts))
            values = [_few_shot(checkpoint, task, seed, schedule) for task in self.test_tasks for seed in range(10)]
            medians[experts] = float(np.median(values))
        self.assertGreaterEqual(medians[3], medians[1])

    def test_fairness_factor(self):
        schedule = Schedule().zero_shot()

        def evaluate(text: str, nu: float):
            task = TaskSpec.from_string(text, nu=nu)
            jains, totals = [], []
            for seed in range(5):
                checkpoint = _train(self.root, f"fair-{text}-{nu}-{seed}", [task], seed)
                summary = meta_test_finetune(task, checkpoint, schedule, seed).few_shot(schedule.few_shot_start)
                jains.append(summary.jain or 0.5)
                totals.append(summary.total)
            return float(np.median(jains)), float(np.median(totals))

        selfish, fair = evaluate("qaloha:0.8", 0.0), evaluate("qaloha:0.8", 1.0)
        self.assertGreater(fair[0], selfish[0])

        selfish, fair = evaluate("tdma:5", 0.0), evaluate("tdma:5", 1.0)
        self.assertLess(abs(fair[0] - selfish[0]), 0.05)
        self.assertLess(abs(fair[1] - selfish[1]), 0.05)
