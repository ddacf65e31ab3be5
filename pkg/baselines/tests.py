import math

import numpy as np
from django.test import SimpleTestCase

from channel.environment import EnvConfig, TaskSpec
from channel.models import parse_scenario
from channel.simulator import ChannelSimulator
from harness.exceptions import HarnessUsageError
from learner.agent import GmaAgent
from learner.config import LearnerConfig
from learner.sac import SacNetworks, TransitionBatch, binary_action_input, q_value

from .dqn import DqnAgent, DqnConfig, DqnPolicy, dqn_train
from .exceptions import UnsupportedScenarioError
from .oracle import ANALYTIC, GENIE, JointStateSpace, OraclePolicy, genie_value, optimal_throughput, oracle_table
from .scratch import baseline_policy, pretrained_baseline, sac_scratch_train


ENV = EnvConfig(history_length=4, throughput_window=20)


def _rollout(scenario_text: str, slots: int, seed: int = 0):
    simulator = ChannelSimulator(parse_scenario(scenario_text), seed=seed)
    policy = OraclePolicy.for_simulator(simulator)
    successes = sum(simulator.step(bool(policy.decide())).success_node is not None for _ in range(slots))
    return successes / slots


class AnalyticOracleTests(SimpleTestCase):
    def test_closed_forms(self):
        expected = {
            "tdma:5": 1.0,
            "qaloha:0.8": 0.8,
            "qaloha:0.1": 0.9,
            "tdma:2+qaloha:0.1": 0.9,
            "tdma:3+qaloha:0.6": 0.58,
        }
        for text, value in expected.items():
            result = optimal_throughput(parse_scenario(text))
            self.assertEqual(result.kind, ANALYTIC)
            self.assertAlmostEqual(result.value, value, delta=1e-6, msg=text)

    def test_empty_scenario(self):
        with self.assertRaises(UnsupportedScenarioError):
            optimal_throughput([])


class GenieOracleTests(SimpleTestCase):
    def test_agrees_with_closed_forms(self):
        for text in ("tdma:5", "qaloha:0.8", "qaloha:0.1", "tdma:3+qaloha:0.6", "tdma:2+qaloha:0.1"):
            scenario = parse_scenario(text)
            self.assertAlmostEqual(genie_value(scenario).value, optimal_throughput(scenario).value, delta=1e-6, msg=text)

    def test_independent_of_node_order(self):
        first = genie_value(parse_scenario("fwaloha:3+qaloha:0.6+tdma:3"))
        second = genie_value(parse_scenario("tdma:3+fwaloha:3+qaloha:0.6"))
        self.assertAlmostEqual(first.value, second.value, delta=1e-9)

    def test_window_aloha_uses_genie(self):
        for text in ("fwaloha:2", "ebaloha:3", "ebaloha:2+tdma:5"):
            result = optimal_throughput(parse_scenario(text))
            self.assertEqual(result.kind, GENIE)
            self.assertGreaterEqual(result.value, 0.0)
            self.assertLessEqual(result.value, 1.0)

    def test_two_half_aloha_nodes(self):
        self.assertAlmostEqual(optimal_throughput(parse_scenario("qaloha:0.5+qaloha:0.5")).value, 0.5, delta=1e-9)

    def test_state_space_limit(self):
        with self.assertRaises(UnsupportedScenarioError):
            optimal_throughput(parse_scenario("ebaloha:8:5+ebaloha:8:5"))

    def test_table_flags_unsupported_rows(self):
        rows = oracle_table([parse_scenario("tdma:5"), parse_scenario("ebaloha:8:5+ebaloha:8:5")])
        self.assertEqual(rows[0]["value"], 1.0)
        self.assertEqual(rows[1]["kind"], "unsupported")
        self.assertIsNone(rows[1]["value"])

    def test_state_encoding_round_trip(self):
        space = JointStateSpace(parse_scenario("ebaloha:2+tdma:4+fwaloha:3"))
        self.assertEqual(space.size, (2 + 4 + 8) * 10 * 3)
        for index in (0, 17, space.size - 1):
            self.assertEqual(space.encode(space.decode(index)), index)


class OracleRolloutTests(SimpleTestCase):
    def test_rollouts_reproduce_oracle_value(self):
        slots = 100_000
        for text in ("tdma:3+qaloha:0.6", "fwaloha:2", "ebaloha:3", "tdma:5"):
            value = optimal_throughput(parse_scenario(text)).value
            stderr = math.sqrt(value * (1.0 - value) / slots)
            self.assertAlmostEqual(_rollout(text, slots), value, delta=max(3 * stderr, 1e-9), msg=text)


class DqnTests(SimpleTestCase):
    def test_tie_goes_to_silence(self):
        agent = DqnAgent(ENV.state_dim, DqnConfig(hidden_size=8), seed=0)
        for name in agent.online.names:
            agent.online.assign(name, np.zeros_like(agent.online[name]))
        self.assertEqual(agent.greedy(np.ones(ENV.state_dim)), 0)

    def test_undiscounted_target_is_reward(self):
        agent = DqnAgent(ENV.state_dim, DqnConfig(hidden_size=8, gamma=0.0), seed=0)
        rng = np.random.default_rng(0)
        batch = TransitionBatch(rng.random((5, 20)), rng.integers(0, 2, 5), rng.random(5), rng.random((5, 20)))
        np.testing.assert_array_equal(agent.td_targets(batch), batch.rewards)

    def test_epsilon_decays_linearly(self):
        agent = DqnAgent(ENV.state_dim, DqnConfig(epsilon_start=1.0, epsilon_end=0.0, epsilon_decay_steps=10), seed=0)
        self.assertEqual(agent.epsilon, 1.0)
        for _ in range(5):
            agent.act(np.zeros(ENV.state_dim))
        self.assertAlmostEqual(agent.epsilon, 0.5)
        for _ in range(10):
            agent.act(np.zeros(ENV.state_dim))
        self.assertEqual(agent.epsilon, 0.0)

    def test_q_values_fit_expected_reward(self):
        config = DqnConfig(hidden_size=8, gamma=0.0, lr=1e-3, target_sync=0)
        agent = DqnAgent(ENV.state_dim, config, seed=1)
        actions = np.array([0] * 10 + [1] * 10)
        rewards = np.array([1.0] + [0.0] * 9 + [1.0] * 9 + [0.0])
        batch = TransitionBatch(np.zeros((20, ENV.state_dim)), actions, rewards, np.zeros((20, ENV.state_dim)))
        for _ in range(3000):
            agent.update(batch)
        q = agent.q_values(np.zeros(ENV.state_dim))[0]
        self.assertAlmostEqual(q[0], 0.1, delta=1e-2)
        self.assertAlmostEqual(q[1], 0.9, delta=1e-2)

    def test_parameter_count_comparable_to_critic(self):
        state_dim = EnvConfig().state_dim
        dqn = DqnAgent(state_dim).spec.num_parameters
        critic = SacNetworks.build(state_dim, latent_dim=6).critic_spec.num_parameters
        self.assertLess(max(dqn, critic) / min(dqn, critic), 2.0)

    def test_target_sync(self):
        agent = DqnAgent(ENV.state_dim, DqnConfig(hidden_size=8, target_sync=2), seed=0)
        rng = np.random.default_rng(0)
        batch = TransitionBatch(rng.random((8, 20)), rng.integers(0, 2, 8), rng.random(8), rng.random((8, 20)))
        agent.update(batch)
        self.assertNotEqual(agent.target.fingerprint(), agent.online.fingerprint())
        agent.update(batch)
        self.assertEqual(agent.target.fingerprint(), agent.online.fingerprint())

    def test_training_is_deterministic(self):
        task = TaskSpec.from_string("qaloha:0.1")
        config = DqnConfig(hidden_size=8, batch_size=16)
        _, first = dqn_train(task, config, seed=4, slots=150, env_config=ENV)
        _, second = dqn_train(task, config, seed=4, slots=150, env_config=ENV)
        self.assertEqual(first.records, second.records)
        self.assertEqual(len(first.updates), 150 // 5 - 3)


class ScratchSacTests(SimpleTestCase):
    def test_training_is_deterministic(self):
        task = TaskSpec.from_string("tdma:5")
        first_policy, first = sac_scratch_train(task, seed=2, slots=120, env_config=ENV)
        _, second = sac_scratch_train(task, seed=2, slots=120, env_config=ENV)
        self.assertEqual(first.records, second.records)
        self.assertIsNone(first_policy.agent.encoder)
        self.assertEqual(first_policy.agent.latent_dim, 0)

    def test_updates_every_five_slots_once_batch_fills(self):
        policy, result = sac_scratch_train(TaskSpec.from_string("tdma:5"), seed=0, slots=100, env_config=ENV)
        self.assertEqual([u["t"] for u in result.updates], list(range(65, 101, 5)))

    def test_q_values_fit_expected_reward(self):
        agent = GmaAgent(ENV.state_dim, ENV.context_dim, LearnerConfig(hidden_size=16, gamma=0.0), seed=1, use_encoder=False)
        actions = np.array([0] * 10 + [1] * 10)
        rewards = np.array([1.0] + [0.0] * 9 + [1.0] * 9 + [0.0])
        batch = TransitionBatch(np.zeros((20, ENV.state_dim)), actions, rewards, np.zeros((20, ENV.state_dim)))
        for _ in range(3000):
            agent.update([(None, batch)])
        state = np.zeros((1, ENV.state_dim))
        for action, expected in ((0, 0.1), (1, 0.9)):
            for store in (agent.nets.critic1, agent.nets.critic2):
                q = q_value(agent.nets.critic_spec, store, state, binary_action_input([action]), np.zeros(0)).item()
                self.assertAlmostEqual(q, expected, delta=1e-2)

    def test_baseline_factory(self):
        self.assertIsInstance(baseline_policy("dqn", ENV), DqnPolicy)
        self.assertIsNone(baseline_policy("sac", ENV).agent.encoder)
        with self.assertRaises(HarnessUsageError):
            baseline_policy("ppo", ENV)

    def test_pretrained_baseline_keeps_experience(self):
        policy = pretrained_baseline("dqn", ENV, slots=80, seed=0)
        self.assertEqual(len(policy.replay), 80)
