import tempfile

import numpy as np
from django.test import SimpleTestCase

from channel.environment import EnvConfig, MacEnvironment, TaskSpec, Transition
from learner.agent import GmaAgent
from learner.config import LearnerConfig

from .buffers import ContextBuffer, ReplayBuffer
from .exceptions import HarnessUsageError, MissingCheckpointError
from .policies import AccessPolicy, GmaPolicy, bounded_steps, periodic_steps, run_online
from .training import (
    DynamicSegment,
    Schedule,
    collect_phase,
    dynamic_run,
    effective_finetune_steps,
    meta_test_finetune,
    meta_train,
    optimize_phase,
    sample_task_batches,
    segment_summaries,
)


ENV = EnvConfig(history_length=4, throughput_window=20)
LEARNER = LearnerConfig(latent_dim=2, num_experts=2, hidden_size=8)


def _transition(tag: float, state_dim: int = ENV.state_dim) -> Transition:
    return Transition(np.zeros(state_dim), 1, tag, np.zeros(state_dim))


def _small_schedule(**overrides) -> Schedule:
    values = dict(
        collect_steps=20,
        episodes=2,
        update_calls=2,
        batch_size=8,
        context_size=10,
        replay_capacity=100,
        test_collect_steps=10,
        finetune_steps=(40, 50, 60),
        test_slots=80,
        few_shot_start=60,
    )
    values.update(overrides)
    return Schedule(**values)


def _agent(seed: int = 0) -> GmaAgent:
    return GmaAgent(ENV.state_dim, ENV.context_dim, LEARNER, seed=seed)


class ScriptedPolicy:
    """Fixed action; records every call the loop makes."""

    def __init__(self, action: int = 0):
        self.action = action
        self.resets = 0
        self.seen = []
        self.updated_after = []

    def reset_context(self):
        self.resets += 1

    def act(self, state, t):
        return self.action

    def observe(self, transition):
        self.seen.append(transition)

    def update(self):
        self.updated_after.append(len(self.seen))
        return {"seen": float(len(self.seen))}


class CountingAgent:
    """Stands in for ``GmaAgent.update`` to inspect what one call receives."""

    def __init__(self):
        self.calls = []

    def update(self, task_batches):
        self.calls.append(task_batches)
        return {"critic1": 0.0}


class ReplayBufferTests(SimpleTestCase):
    def test_fifo_eviction(self):
        buffer = ReplayBuffer(1000)
        buffer.extend(_transition(float(i)) for i in range(1200))
        self.assertEqual(len(buffer), 1000)
        self.assertEqual([t.r for t in buffer][:2], [200.0, 201.0])
        self.assertEqual([t.r for t in buffer.latest(3)], [1197.0, 1198.0, 1199.0])

    def test_sample_without_replacement(self):
        buffer = ReplayBuffer(100)
        buffer.extend(_transition(float(i)) for i in range(100))
        sample = buffer.sample(64, np.random.default_rng(0))
        self.assertEqual(len({t.r for t in sample}), 64)

    def test_small_buffer_returns_everything(self):
        buffer = ReplayBuffer(100)
        buffer.extend(_transition(float(i)) for i in range(5))
        sample = buffer.sample(64, np.random.default_rng(0))
        self.assertEqual(sorted(t.r for t in sample), [0.0, 1.0, 2.0, 3.0, 4.0])

    def test_batch_shapes(self):
        buffer = ReplayBuffer(100)
        buffer.extend(_transition(float(i)) for i in range(20))
        batch = buffer.sample_batch(8, np.random.default_rng(0))
        self.assertEqual(batch.states.shape, (8, ENV.state_dim))
        self.assertEqual(batch.rewards.shape, (8,))

    def test_invalid_capacity(self):
        with self.assertRaises(HarnessUsageError):
            ReplayBuffer(0)


class ContextBufferTests(SimpleTestCase):
    def test_keeps_latest(self):
        context = ContextBuffer(3, width=ENV.context_dim)
        for i in range(5):
            context.push(_transition(float(i)))
        self.assertEqual([t.r for t in context.transitions], [2.0, 3.0, 4.0])
        self.assertEqual(context.batch().vectors.shape, (3, ENV.context_dim))

    def test_clear_gives_empty_batch(self):
        context = ContextBuffer(3, width=ENV.context_dim)
        context.push(_transition(1.0))
        context.clear()
        self.assertEqual(len(context.batch()), 0)


class ScheduleTests(SimpleTestCase):
    def test_defaults(self):
        schedule = Schedule()
        self.assertEqual(schedule.collect_steps, 200)
        self.assertEqual(schedule.update_calls, 250)
        self.assertEqual(schedule.warmup_steps, 150)
        self.assertEqual(schedule.finetune_steps, (200, 250, 300))

    def test_zero_shot_has_no_updates(self):
        self.assertEqual(Schedule().zero_shot().finetune_steps, ())

    def test_negative_counts_rejected(self):
        with self.assertRaises(HarnessUsageError):
            Schedule(collect_steps=-1)
        with self.assertRaises(HarnessUsageError):
            Schedule(finetune_steps=(-5,))

    def test_steps_inside_warmup_are_ignored(self):
        schedule = Schedule(finetune_steps=(100, 200))
        with self.assertLogs("harness.training", level="WARNING"):
            self.assertEqual(effective_finetune_steps(schedule), (200,))


class StepScheduleTests(SimpleTestCase):
    def test_periodic(self):
        self.assertEqual(periodic_steps(200, 50), [50, 100, 150, 200])
        self.assertEqual(periodic_steps(200, 0), [])

    def test_bounded_after_each_change(self):
        steps = bounded_steps([2000, 4000, 6000], 8000, 50, 16)
        self.assertEqual(len(steps), 64)
        self.assertEqual(steps[:2], [50, 100])
        self.assertEqual(steps[16], 2050)
        self.assertEqual(steps[-1], 6800)

    def test_bounded_clipped_by_next_change(self):
        self.assertEqual(bounded_steps([100], 300, 50, 16), [50, 100, 150, 200, 250, 300])


class RunOnlineTests(SimpleTestCase):
    def test_updates_at_requested_slots(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"), ENV, seed=0)
        policy = ScriptedPolicy()
        self.assertIsInstance(policy, AccessPolicy)
        result = run_online(env, policy, 30, update_steps=[10, 25, 99])
        self.assertEqual(len(result), 30)
        self.assertEqual(policy.updated_after, [10, 25])
        self.assertEqual([u["t"] for u in result.updates], [10, 25])

    def test_silent_agent_on_tdma(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"), ENV, seed=0)
        result = run_online(env, ScriptedPolicy(0), 100)
        summary = result.summary()
        self.assertEqual(summary.s_agent, 0.0)
        self.assertAlmostEqual(summary.s_existing, 0.1)

    def test_scenario_change_clears_context(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:4"), ENV, seed=0)
        policy = ScriptedPolicy()
        new_task = TaskSpec.from_string("tdma:2+qaloha:0.1")
        result = run_online(env, policy, 40, changes={20: new_task})
        self.assertEqual(policy.resets, 1)
        self.assertEqual(result.records[19]["task"], "TDMA(4)")
        self.assertEqual(result.records[20]["task"], new_task.label)
        self.assertEqual(env.t, 40)


class GmaPolicyTests(SimpleTestCase):
    def test_context_lags_the_current_slot(self):
        policy = GmaPolicy(_agent(), context_size=10, batch_size=8, seed=0)
        env = MacEnvironment(TaskSpec.from_string("qaloha:0.5"), ENV, seed=0)
        sizes = []
        original_act = policy.act

        def act(state, t):
            sizes.append(len(policy.context))
            return original_act(state, t)

        policy.act = act
        run_online(env, policy, 15)
        self.assertEqual(sizes, [min(t, 10) for t in range(15)])

    def test_update_skipped_until_batch_available(self):
        policy = GmaPolicy(_agent(), context_size=10, batch_size=8, seed=0)
        with self.assertLogs("harness.policies", level="WARNING"):
            self.assertEqual(policy.update(), {})


class CollectPhaseTests(SimpleTestCase):
    def test_collects_exactly_n_transitions(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"), ENV, seed=0)
        buffer = ReplayBuffer(1000)
        summary = collect_phase(_agent(), env, buffer, 200, 150)
        self.assertEqual(len(buffer), 200)
        self.assertEqual(summary.slots, 200)

    def test_zero_steps(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"), ENV, seed=0)
        buffer = ReplayBuffer(1000)
        collect_phase(_agent(), env, buffer, 0, 150)
        self.assertEqual(len(buffer), 0)

    def test_full_buffer_evicts_oldest(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"), ENV, seed=0)
        buffer = ReplayBuffer(1000)
        buffer.extend(_transition(-1.0) for _ in range(1000))
        collect_phase(_agent(), env, buffer, 200, 150)
        self.assertEqual(len(buffer), 1000)
        self.assertEqual(sum(1 for t in buffer if t.r == -1.0), 800)


class OptimizePhaseTests(SimpleTestCase):
    def _buffers(self, count, size=20):
        buffers = []
        for k in range(count):
            buffer = ReplayBuffer(100)
            buffer.extend(_transition(float(k)) for _ in range(size))
            buffers.append(buffer)
        return buffers

    def test_zero_update_calls_leave_parameters(self):
        agent = _agent()
        before = {name: store.fingerprint() for name, store in agent.stores().items()}
        optimize_phase(agent, self._buffers(2), _small_schedule(update_calls=0), np.random.default_rng(0))
        self.assertEqual(before, {name: store.fingerprint() for name, store in agent.stores().items()})

    def test_one_call_moves_targets(self):
        agent = _agent()
        target = agent.nets.target1["out.bias"].copy()
        optimize_phase(agent, self._buffers(1), _small_schedule(update_calls=1), np.random.default_rng(0))
        expected = 0.005 * agent.nets.critic1["out.bias"] + (1.0 - 0.005) * target
        np.testing.assert_allclose(agent.nets.target1["out.bias"], expected, atol=1e-15)

    def test_every_task_contributes_to_each_call(self):
        agent = CountingAgent()
        optimize_phase(agent, self._buffers(8), _small_schedule(update_calls=3), np.random.default_rng(0))
        self.assertEqual(len(agent.calls), 3)
        self.assertTrue(all(len(call) == 8 for call in agent.calls))

    def test_batches_stay_within_their_task(self):
        schedule = _small_schedule()
        for k, (context, batch) in enumerate(sample_task_batches(self._buffers(3), schedule, np.random.default_rng(0))):
            self.assertTrue(np.all(batch.rewards == float(k)))
            self.assertTrue(np.all(context.vectors[:, ENV.state_dim + 1] == float(k)))

    def test_context_holds_only_newest_transitions(self):
        buffer = ReplayBuffer(100)
        buffer.extend(_transition(-1.0) for _ in range(60))
        buffer.extend(_transition(5.0) for _ in range(20))
        schedule = _small_schedule(context_size=10)
        [(context, batch)] = sample_task_batches([buffer], schedule, np.random.default_rng(0))
        rewards = context.vectors[:, ENV.state_dim + 1]
        self.assertEqual(len(rewards), 10)
        self.assertTrue(np.all(rewards == 5.0))
        self.assertEqual(len(batch.rewards), 8)

    def test_underfilled_task_skipped(self):
        agent = CountingAgent()
        buffers = self._buffers(2) + self._buffers(1, size=3)
        with self.assertLogs("harness.training", level="WARNING"):
            optimize_phase(agent, buffers, _small_schedule(update_calls=1), np.random.default_rng(0))
        self.assertEqual(len(agent.calls[0]), 2)


class MetaTrainTests(SimpleTestCase):
    tasks = [TaskSpec.from_string("tdma:1"), TaskSpec.from_string("qaloha:0.7")]

    def test_same_seed_same_curves(self):
        first = meta_train(self.tasks, _small_schedule(), seed=3, env_config=ENV, learner_config=LEARNER)
        second = meta_train(self.tasks, _small_schedule(), seed=3, env_config=ENV, learner_config=LEARNER)
        self.assertEqual(first.curves, second.curves)
        self.assertEqual(first.losses, second.losses)
        self.assertEqual(first.agent.encoder_fingerprint(), second.agent.encoder_fingerprint())

    def test_curve_records(self):
        result = meta_train(self.tasks, _small_schedule(), seed=0, env_config=ENV, learner_config=LEARNER)
        self.assertEqual(len(result.curves), 4)
        self.assertEqual({r["task"] for r in result.curves}, {"TDMA(1)", "q-ALOHA(0.7)"})
        self.assertEqual(len(result.losses), 2)

    def test_zero_episodes_keep_initialisation(self):
        result = meta_train(self.tasks, _small_schedule(episodes=0), seed=0, env_config=ENV, learner_config=LEARNER)
        fresh = meta_train(self.tasks, _small_schedule(episodes=0), seed=0, env_config=ENV, learner_config=LEARNER)
        self.assertEqual(result.curves, [])
        self.assertEqual(result.agent.encoder_fingerprint(), fresh.agent.encoder_fingerprint())

    def test_empty_task_set(self):
        with self.assertRaises(HarnessUsageError):
            meta_train([], _small_schedule())


class MetaTestTests(SimpleTestCase):
    def setUp(self):
        self.task = TaskSpec.from_string("tdma:2+qaloha:0.1")

    def test_encoder_frozen_during_adaptation(self):
        result = meta_test_finetune(self.task, _agent(), _small_schedule(), seed=0, env_config=ENV)
        self.assertEqual(result.encoder_before, result.encoder_after)
        self.assertEqual([u["t"] for u in result.run.updates], [40, 50, 60])
        self.assertEqual(len(result.run), 80)

    def test_zero_shot_runs_without_updates(self):
        result = meta_test_finetune(self.task, _agent(), _small_schedule().zero_shot(), seed=0, env_config=ENV)
        self.assertEqual(result.run.updates, [])
        self.assertEqual(result.zero_shot.slots, 80)

    def test_same_seed_same_run_from_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            _agent().save(tmp)
            first = meta_test_finetune(self.task, tmp, _small_schedule(), seed=5, env_config=ENV)
            second = meta_test_finetune(self.task, tmp, _small_schedule(), seed=5, env_config=ENV)
        self.assertEqual(first.run.records, second.run.records)

    def test_missing_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingCheckpointError):
                meta_test_finetune(self.task, tmp, _small_schedule(), env_config=ENV)


class DynamicRunTests(SimpleTestCase):
    def test_change_schedule(self):
        segments = [
            DynamicSegment(0, TaskSpec.from_string("tdma:4")),
            DynamicSegment(30, TaskSpec.from_string("fwaloha:2")),
        ]
        policy = ScriptedPolicy()
        run = dynamic_run(segments, policy, 60, env_config=ENV, update_steps=[10, 40])
        self.assertEqual(policy.resets, 1)
        self.assertEqual(policy.updated_after, [10, 40])
        self.assertEqual(run.records[30]["task"], "FW-ALOHA(2)")
        labels = [label for label, _ in segment_summaries(run, segments, 60, tail=10)]
        self.assertEqual(labels, ["TDMA(4)", "FW-ALOHA(2)"])

    def test_without_changes_matches_static_run(self):
        task = TaskSpec.from_string("qaloha:0.3")
        dynamic = dynamic_run([DynamicSegment(0, task)], ScriptedPolicy(1), 50, seed=2, env_config=ENV)
        reference = dynamic_run([DynamicSegment(0, task)], ScriptedPolicy(1), 50, seed=2, env_config=ENV)
        self.assertEqual(dynamic.records, reference.records)
        self.assertEqual({r["task"] for r in dynamic.records}, {task.label})

    def test_gma_agent_updates_after_each_change(self):
        segments = [
            DynamicSegment(0, TaskSpec.from_string("tdma:4")),
            DynamicSegment(100, TaskSpec.from_string("tdma:3+qaloha:0.2")),
        ]
        schedule = _small_schedule(dynamic_update_every=20, dynamic_updates=2)
        run = dynamic_run(segments, _agent(), 160, schedule, env_config=ENV)
        self.assertEqual([u["t"] for u in run.updates], [20, 40, 120, 140])

    def test_segments_must_start_at_zero(self):
        with self.assertRaises(HarnessUsageError):
            dynamic_run([DynamicSegment(5, TaskSpec.from_string("tdma:4"))], ScriptedPolicy(), 10, env_config=ENV)
