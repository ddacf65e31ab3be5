import itertools
import math
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from .environment import (
    PAIR_ORDER,
    ActionObsPair,
    EnvConfig,
    MacEnvironment,
    StateWindow,
    TaskSpec,
    ThroughputSummary,
    ThroughputWindow,
    Transition,
    encode_state,
)
from .exceptions import EnvironmentUsageError, MetricDomainError, ProtocolConfigError
from .models import NodeState, Observation, ProtocolSpec, SlotOutcome, parse_scenario, scenario_to_string
from .rewards import fairness_fraction, jain_index, reward, throughput_reward
from .simulator import (
    ChannelSimulator,
    always,
    node_decide,
    node_feedback,
    node_rng,
    never,
    random_policy,
    read_trace,
    resolve_slot,
    simulate,
    trace_throughput,
    write_trace,
)


def _tx_times(trace, node):
    return [t for t, outcome in enumerate(trace) if node in outcome.tx_set]


class ProtocolSpecTests(SimpleTestCase):
    def test_parse_scenario_string(self):
        scenario = parse_scenario("tdma:2+qaloha:0.1")
        self.assertEqual(scenario, [ProtocolSpec.tdma(2), ProtocolSpec.q_aloha(0.1)])
        self.assertEqual(scenario_to_string(scenario), "tdma:2+qaloha:0.1")

    def test_eb_aloha_defaults_to_two_backoff_stages(self):
        spec = ProtocolSpec.from_string("ebaloha:3")
        self.assertEqual(spec.window, 3)
        self.assertEqual(spec.max_stage, 2)

    def test_labels(self):
        self.assertEqual(ProtocolSpec.tdma(5).label, "TDMA(5)")
        self.assertEqual(ProtocolSpec.q_aloha(0.8).label, "q-ALOHA(0.8)")
        self.assertEqual(ProtocolSpec.fw_aloha(2).label, "FW-ALOHA(2)")
        self.assertEqual(ProtocolSpec.eb_aloha(3).label, "EB-ALOHA(3)")

    def test_labels_tell_apart_non_default_parameters(self):
        self.assertEqual(ProtocolSpec.eb_aloha(3, 4).label, "EB-ALOHA(3:4)")
        self.assertNotEqual(ProtocolSpec.eb_aloha(3, 4).label, ProtocolSpec.eb_aloha(3, 5).label)
        self.assertEqual(ProtocolSpec.tdma(5, 20).label, "TDMA(5:20)")
        self.assertEqual(parse_scenario("ebaloha:3:2")[0].label, "EB-ALOHA(3)")

    def test_invalid_parameters_rejected(self):
        with self.assertRaises(ProtocolConfigError):
            ProtocolSpec.q_aloha(1.5)
        with self.assertRaises(ProtocolConfigError):
            ProtocolSpec.fw_aloha(0)
        with self.assertRaises(ProtocolConfigError):
            ProtocolSpec.tdma(11)
        with self.assertRaises(ProtocolConfigError):
            ProtocolSpec.from_string("csma:3")
        with self.assertRaises(ProtocolConfigError):
            parse_scenario("")

    def test_from_dict_rejects_unknown_fields(self):
        self.assertEqual(ProtocolSpec.from_dict({"kind": "tdma", "slot": 5}), ProtocolSpec.tdma(5))
        with self.assertRaises(ProtocolConfigError):
            ProtocolSpec.from_dict({"kind": "tdma", "slot": 5, "phase": 2})

    def test_error_to_dict(self):
        error = ProtocolConfigError("bad", details={"q": 2})
        self.assertEqual(error.to_dict()["error"]["code"], "CONFIG_ERROR")
        self.assertEqual(error.to_dict()["error"]["details"], {"q": 2})


class NodeDecideTests(SimpleTestCase):
    def setUp(self):
        self.rng = node_rng(0, 1)

    def test_q_aloha_probability_one_always_transmits(self):
        spec = ProtocolSpec.q_aloha(1.0)
        for _ in range(20):
            transmit, _ = node_decide(spec, NodeState(), self.rng)
            self.assertTrue(transmit)

    def test_tdma_transmits_only_in_its_slot(self):
        spec = ProtocolSpec.tdma(5)
        transmit, staged = node_decide(spec, NodeState(frame_pos=5), self.rng)
        self.assertTrue(transmit)
        self.assertEqual(staged.frame_pos, 6)
        transmit, _ = node_decide(spec, NodeState(frame_pos=6), self.rng)
        self.assertFalse(transmit)

    def test_tdma_frame_wraps(self):
        _, staged = node_decide(ProtocolSpec.tdma(5), NodeState(frame_pos=10), self.rng)
        self.assertEqual(staged.frame_pos, 1)

    def test_fw_aloha_counter_decrements(self):
        transmit, staged = node_decide(ProtocolSpec.fw_aloha(3), NodeState(counter=2), self.rng)
        self.assertFalse(transmit)
        self.assertEqual(staged.counter, 1)

    def test_fw_aloha_transmits_on_expired_counter(self):
        transmit, _ = node_decide(ProtocolSpec.fw_aloha(3), NodeState(counter=0), self.rng)
        self.assertTrue(transmit)

    def test_state_mismatch_is_config_error(self):
        with self.assertRaises(ProtocolConfigError):
            node_decide(ProtocolSpec.fw_aloha(3), NodeState(counter=5), self.rng)
        with self.assertRaises(ProtocolConfigError):
            node_decide(ProtocolSpec.eb_aloha(2, 2), NodeState(stage=3), self.rng)
        with self.assertRaises(ProtocolConfigError):
            node_decide(ProtocolSpec.tdma(2), NodeState(frame_pos=0), self.rng)


class NodeFeedbackTests(SimpleTestCase):
    def setUp(self):
        self.collision = SlotOutcome(tx_set=frozenset({0, 1}), obs=Observation.COLLISION)
        self.success = SlotOutcome(tx_set=frozenset({1}), obs=Observation.SUCCESS, success_node=1)

    def test_eb_aloha_collision_doubles_window(self):
        spec = ProtocolSpec.eb_aloha(2, 2)
        for seed in range(50):
            state = node_feedback(spec, NodeState(counter=0, stage=0), True, self.collision, node_rng(seed, 1))
            self.assertEqual(state.stage, 1)
            self.assertIn(state.counter, range(4))

    def test_eb_aloha_stage_capped(self):
        spec = ProtocolSpec.eb_aloha(2, 2)
        state = node_feedback(spec, NodeState(counter=0, stage=2), True, self.collision, node_rng(0, 1))
        self.assertEqual(state.stage, 2)
        self.assertLess(state.counter, 8)

    def test_eb_aloha_success_resets_stage(self):
        spec = ProtocolSpec.eb_aloha(2, 2)
        state = node_feedback(spec, NodeState(counter=0, stage=2), True, self.success, node_rng(0, 1))
        self.assertEqual(state.stage, 0)
        self.assertLess(state.counter, 2)

    def test_fw_aloha_degenerate_window(self):
        state = node_feedback(ProtocolSpec.fw_aloha(1), NodeState(), True, self.success, node_rng(0, 1))
        self.assertEqual(state.counter, 0)

    def test_silent_node_keeps_staged_state(self):
        staged = NodeState(counter=1)
        self.assertEqual(
            node_feedback(ProtocolSpec.fw_aloha(3), staged, False, self.success, node_rng(0, 1)),
            staged,
        )


class ResolveSlotTests(SimpleTestCase):
    def test_idle(self):
        outcome = resolve_slot([False, False])
        self.assertEqual(outcome.obs, Observation.IDLE)
        self.assertIsNone(outcome.success_node)

    def test_agent_success(self):
        outcome = resolve_slot([True, False])
        self.assertEqual(outcome.obs, Observation.SUCCESS)
        self.assertEqual(outcome.success_node, 0)

    def test_collision(self):
        outcome = resolve_slot([True, True])
        self.assertEqual(outcome.obs, Observation.COLLISION)
        self.assertIsNone(outcome.success_node)

    def test_empty_decisions(self):
        with self.assertRaises(ProtocolConfigError):
            resolve_slot([])

    def test_observation_consistent_with_tx_set(self):
        for decisions in itertools.product([False, True], repeat=3):
            outcome = resolve_slot(list(decisions))
            n = len(outcome.tx_set)
            self.assertEqual(outcome.obs, Observation.IDLE if n == 0 else Observation.SUCCESS if n == 1 else Observation.COLLISION)


class SimulateTests(SimpleTestCase):
    def test_lone_q_aloha_throughput(self):
        trace = simulate([ProtocolSpec.q_aloha(0.5)], never, 100_000, seed=1)
        _, existing = trace_throughput(trace)
        stderr = math.sqrt(0.25 / 100_000)
        self.assertLess(abs(existing - 0.5), 3 * stderr)

    def test_lone_q_aloha_within_three_standard_errors(self):
        for q in (0.1, 0.8):
            trace = simulate([ProtocolSpec.q_aloha(q)], never, 100_000, seed=7)
            _, existing = trace_throughput(trace)
            self.assertLess(abs(existing - q), 3 * math.sqrt(q * (1 - q) / 100_000))

    def test_lone_tdma_exact(self):
        trace = simulate([ProtocolSpec.tdma(5)], never, 10_000, seed=3)
        self.assertEqual(trace_throughput(trace), (0.0, 0.1))

    def test_two_q_aloha_nodes(self):
        trace = simulate([ProtocolSpec.q_aloha(0.5), ProtocolSpec.q_aloha(0.5)], never, 100_000, seed=2)
        _, existing = trace_throughput(trace)
        self.assertAlmostEqual(existing, 0.5, delta=0.01)

    def test_always_transmitting_agent_against_tdma(self):
        trace = simulate([ProtocolSpec.tdma(5)], always, 10_000)
        agent, existing = trace_throughput(trace)
        self.assertAlmostEqual(agent + existing, 0.9)

    def test_zero_slots(self):
        self.assertEqual(simulate([ProtocolSpec.tdma(5)], never, 0), [])

    def test_same_seed_same_trace(self):
        scenario = parse_scenario("qaloha:0.3+fwaloha:3+ebaloha:2")
        first = simulate(scenario, random_policy(0.5, seed=4), 2_000, seed=11)
        second = simulate(scenario, random_policy(0.5, seed=4), 2_000, seed=11)
        self.assertEqual(first, second)

    def test_adding_a_node_does_not_perturb_others(self):
        alone = simulate([ProtocolSpec.q_aloha(0.3)], never, 2_000, seed=5)
        paired = simulate([ProtocolSpec.q_aloha(0.3), ProtocolSpec.tdma(2)], never, 2_000, seed=5)
        self.assertEqual(_tx_times(alone, 1), _tx_times(paired, 1))

    def test_tdma_transmits_once_per_frame_at_its_offset(self):
        trace = simulate([ProtocolSpec.tdma(7)], random_policy(0.5, seed=1), 1_000)
        times = _tx_times(trace, 1)
        self.assertEqual(len(times), 100)
        self.assertTrue(all(t % 10 == 6 for t in times))

    def test_fw_aloha_gaps(self):
        trace = simulate([ProtocolSpec.fw_aloha(3)], random_policy(0.3, seed=2), 5_000, seed=9)
        gaps = np.diff(_tx_times(trace, 1))
        self.assertGreaterEqual(gaps.min(), 1)
        self.assertLessEqual(gaps.max(), 3)

    def test_eb_aloha_gaps(self):
        scenario = [ProtocolSpec.eb_aloha(2, 2), ProtocolSpec.eb_aloha(2, 2)]
        trace = simulate(scenario, random_policy(0.3, seed=2), 5_000, seed=9)
        for node in (1, 2):
            gaps = np.diff(_tx_times(trace, node))
            self.assertGreaterEqual(gaps.min(), 1)
            self.assertLessEqual(gaps.max(), 8)

    def test_swap_scenario_keeps_clock(self):
        simulator = ChannelSimulator([ProtocolSpec.tdma(4)], seed=0)
        for _ in range(13):
            simulator.step(False)
        simulator.swap_scenario([ProtocolSpec.tdma(2)])
        self.assertEqual(simulator.t, 13)
        self.assertEqual(simulator.node_states[0].frame_pos, 4)

    def test_trace_export(self):
        trace = simulate([ProtocolSpec.tdma(1)], always, 20)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "trace.jsonl")
            self.assertEqual(write_trace(trace, path), 20)
            records = read_trace(path)
        self.assertEqual(records[0], {"t": 0, "agentTx": 1, "obs": 2, "successNode": None})
        self.assertEqual(records[1], {"t": 1, "agentTx": 1, "obs": 1, "successNode": 0})


class RewardTests(SimpleTestCase):
    def test_throughput_reward(self):
        self.assertEqual(throughput_reward(1), 1)
        self.assertEqual(throughput_reward(0), 0)
        self.assertEqual(throughput_reward(2), 0)

    def test_fairness_fraction(self):
        self.assertAlmostEqual(fairness_fraction(1, 0.3, 0.1), 0.75)
        self.assertAlmostEqual(fairness_fraction(0, 0.2, 0.2), 0.5)
        self.assertEqual(fairness_fraction(1, 0.0, 0.0), 0.5)
        with self.assertRaises(MetricDomainError):
            fairness_fraction(1, -0.1, 0.2)

    def test_reward_values(self):
        self.assertEqual(reward(1, 1, 0.3, 0.1, 0.0), 1.0)
        self.assertAlmostEqual(reward(1, 1, 0.3, 0.1, 1.0), 0.25)
        self.assertAlmostEqual(reward(1, 1, 0.3, 0.1, 0.5), 0.625)
        with self.assertRaises(MetricDomainError):
            reward(1, 1, 0.3, 0.1, 1.5)
        with self.assertRaises(MetricDomainError):
            reward(0, 2, -0.3, 0.1, 0.5)

    def test_full_fairness_matches_case_analysis(self):
        grid = [0.0, 0.1, 0.25, 0.4]
        for a, o, s0, sn in itertools.product([0, 1], [0, 1, 2], grid, grid):
            if (a, o) == (1, 0) or s0 + sn == 0:
                continue
            if o != 1:
                expected = 0.0
            elif a == 1:
                expected = sn / (s0 + sn)
            else:
                expected = s0 / (s0 + sn)
            self.assertAlmostEqual(reward(a, o, s0, sn, 1.0), expected)

    def test_reward_bounds_and_monotone_in_nu(self):
        nus = np.linspace(0.0, 1.0, 11)
        values = [reward(1, 1, 0.4, 0.1, nu) for nu in nus]
        self.assertTrue(all(0.0 <= v <= 1.0 for v in values))
        self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))

    def test_jain_index(self):
        self.assertAlmostEqual(jain_index(0.25, 0.25), 1.0)
        self.assertAlmostEqual(jain_index(0.3, 0.1), 0.8)
        self.assertAlmostEqual(jain_index(0.5, 0.0), 0.5)
        self.assertAlmostEqual(jain_index(0.1, 0.3), jain_index(0.3, 0.1))
        with self.assertRaises(MetricDomainError):
            jain_index(0.0, 0.0)


class StateEncodingTests(SimpleTestCase):
    def test_illegal_pair(self):
        with self.assertRaises(ProtocolConfigError):
            ActionObsPair(1, 0)

    def test_category_order(self):
        self.assertEqual([ActionObsPair(*p).category_index for p in PAIR_ORDER], [0, 1, 2, 3, 4])

    def test_reset_window(self):
        vector = encode_state(StateWindow(20))
        self.assertEqual(vector.shape, (100,))
        np.testing.assert_array_equal(vector, np.tile([1.0, 0, 0, 0, 0], 20))

    def test_newest_pair_is_last_block(self):
        window = StateWindow(20)
        window.push(ActionObsPair(1, 2))
        np.testing.assert_array_equal(encode_state(window)[-5:], [0, 0, 0, 0, 1])
        self.assertEqual(encode_state(window).reshape(20, 5).sum(axis=1).tolist(), [1.0] * 20)

    def test_windows_differing_in_one_slot(self):
        first = StateWindow(4, [ActionObsPair(0, 1), ActionObsPair(1, 1)])
        second = StateWindow(4, [ActionObsPair(0, 2), ActionObsPair(1, 1)])
        diff = (encode_state(first) != encode_state(second)).reshape(4, 5).any(axis=1)
        self.assertEqual(diff.sum(), 1)


class MacEnvironmentTests(SimpleTestCase):
    def test_step_before_reset(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"))
        with self.assertRaises(EnvironmentUsageError):
            env.step(1)

    def test_step_past_horizon(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"), horizon=2)
        env.reset()
        env.step(0)
        env.step(0)
        with self.assertRaises(EnvironmentUsageError):
            env.step(0)

    def test_agent_success_against_tdma(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"))
        env.reset()
        obs, r, s_next = env.step(1)
        self.assertEqual(obs, 1)
        self.assertEqual(r, 1.0)
        np.testing.assert_array_equal(s_next[-5:], [0, 0, 0, 1, 0])

    def test_forced_collision_against_tdma(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"))
        env.reset()
        for _ in range(4):
            env.step(0)
        obs, r, _ = env.step(1)
        self.assertEqual(obs, 2)
        self.assertEqual(r, 0.0)

    def test_existing_success_credited(self):
        env = MacEnvironment(TaskSpec.from_string("qaloha:1.0"))
        env.reset()
        obs, r, _ = env.step(0)
        self.assertEqual((obs, r), (1, 1.0))
        self.assertEqual(env.throughput.s_existing, 1 / 500)
        self.assertEqual(env.throughput.s_agent, 0.0)

    def test_reward_uses_window_including_current_slot(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5", nu=1.0))
        env.reset()
        _, r, _ = env.step(1)
        # only the agent has succeeded so far: f = 1
        self.assertEqual(r, 0.0)

    def test_throughput_windows_track_last_z_slots(self):
        config = EnvConfig(history_length=3, throughput_window=10)
        env = MacEnvironment(TaskSpec.from_string("qaloha:0.4+tdma:3"), config=config, seed=8)
        env.reset()
        policy = random_policy(0.4, seed=3)
        successes = []
        for t in range(60):
            obs, _, _ = env.step(int(policy(t)))
            successes.append(obs == 1)
            expected = sum(successes[-10:]) / 10
            self.assertAlmostEqual(env.throughput.s_agent + env.throughput.s_existing, expected)

    def test_metrics_record(self):
        env = MacEnvironment(TaskSpec.from_string("tdma:5"))
        env.reset()
        self.assertIsNone(env.metrics()["jain"])
        env.step(1)
        record = env.metrics()
        self.assertEqual(record["t"], 1)
        self.assertEqual(record["S0"], 1 / 500)
        self.assertAlmostEqual(record["jain"], 0.5)

    def test_reset_is_reproducible(self):
        env = MacEnvironment(TaskSpec.from_string("qaloha:0.5+ebaloha:2"), seed=4)
        runs = []
        for _ in range(2):
            env.reset()
            runs.append([env.step(t % 2)[0] for t in range(200)])
        self.assertEqual(runs[0], runs[1])

    def test_transition_context_vector(self):
        s = np.zeros(100)
        transition = Transition(s=s, a=1, r=0.5, s_next=np.ones(100))
        vector = transition.context_vector()
        self.assertEqual(vector.shape, (202,))
        self.assertEqual(vector[100], 1.0)
        self.assertEqual(vector[101], 0.5)


class TaskSpecTests(SimpleTestCase):
    def test_round_trip(self):
        task = TaskSpec.from_string("tdma:2+qaloha:0.1", nu=0.5)
        self.assertEqual(TaskSpec.from_dict(task.to_dict()), task)
        self.assertEqual(task.label, "TDMA(2)+q-ALOHA(0.1)")

    def test_invalid_nu(self):
        with self.assertRaises(ProtocolConfigError):
            TaskSpec.from_string("tdma:2", nu=1.5)


class ThroughputSummaryTests(SimpleTestCase):
    def test_counts(self):
        summary = ThroughputSummary()
        for action, obs in [(1, 1), (0, 1), (0, 0), (1, 2)]:
            summary.record(action, obs)
        self.assertEqual(summary.s_agent, 0.25)
        self.assertEqual(summary.s_existing, 0.25)
        self.assertEqual(summary.jain, 1.0)

    def test_ring_buffer(self):
        window = ThroughputWindow(2)
        window.push(True, False)
        window.push(False, True)
        window.push(False, True)
        self.assertEqual((window.s_agent, window.s_existing), (0.0, 1.0))
