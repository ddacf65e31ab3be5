"""
Optimal sum-throughput oracles.

Lone TDMA, lone q-ALOHA and a TDMA + q-ALOHA pair have closed forms. Every
other scenario is solved as an average-reward MDP over the joint internal
state of the existing nodes (TDMA frame position, window counter, backoff
stage) with the agent assumed to observe that state: a genie upper bound
for window-ALOHA nodes, exact otherwise. q-ALOHA coins are drawn after the
agent commits, so they never enter the state.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from channel.environment import MacEnvironment
from channel.models import NodeState, ProtocolKind, ProtocolSpec, scenario_label
from channel.simulator import ChannelSimulator, window_size

from .exceptions import UnsupportedScenarioError


logger = logging.getLogger(__name__)

ANALYTIC = "analytic"
GENIE = "valueIteration-genie"

MAX_JOINT_STATES = 50_000
MAX_COIN_NODES = 10
LAZINESS = 0.5  # tau in the lazy chain tau * P + (1 - tau) * I


@dataclass
class OracleResult:
    label: str
    value: float
    kind: str
    policy_sketch: str
    iterations: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {"scenario": self.label, "value": self.value, "kind": self.kind, "policy": self.policy_sketch}


# ----- closed forms -----

def _analytic(scenario: Sequence[ProtocolSpec]) -> Optional[OracleResult]:
    label = scenario_label(list(scenario))
    kinds = sorted(spec.kind.value for spec in scenario)

    if kinds == [ProtocolKind.TDMA.value]:
        return OracleResult(label, 1.0, ANALYTIC, "transmit in every slot the TDMA node leaves free")

    if kinds == [ProtocolKind.Q_ALOHA.value]:
        q = scenario[0].q
        action = "stay silent" if q >= 0.5 else "always transmit"
        return OracleResult(label, max(q, 1.0 - q), ANALYTIC, action)

    if kinds == [ProtocolKind.Q_ALOHA.value, ProtocolKind.TDMA.value]:
        q = next(s.q for s in scenario if s.kind == ProtocolKind.Q_ALOHA)
        frame = next(s.frame_length for s in scenario if s.kind == ProtocolKind.TDMA)
        value = ((1.0 - q) + (frame - 1) * max(q, 1.0 - q)) / frame
        free = "stay silent" if q >= 0.5 else "transmit"
        return OracleResult(label, value, ANALYTIC, f"silent in the TDMA slot, {free} in the other {frame - 1}")

    return None


# ----- genie MDP -----

class JointStateSpace:
    """Mixed-radix enumeration of the existing nodes' internal states."""

    def __init__(self, scenario: Sequence[ProtocolSpec]):
        self.scenario = list(scenario)
        for spec in self.scenario:
            if not isinstance(spec.kind, ProtocolKind):
                raise UnsupportedScenarioError(f"Unknown protocol {spec.kind!r}")
        self.local_states: List[List[NodeState]] = [self._local_states(spec) for spec in self.scenario]
        self.local_index: List[Dict[NodeState, int]] = [
            {state: i for i, state in enumerate(states)} for states in self.local_states
        ]
        self.radix = [len(states) for states in self.local_states]
        self.size = int(np.prod(self.radix, dtype=np.int64))
        if self.size > MAX_JOINT_STATES:
            raise UnsupportedScenarioError(
                f"Joint state space of {self.size} states exceeds the {MAX_JOINT_STATES}-state limit",
                details={"scenario": scenario_label(self.scenario), "states": self.size},
            )

    @staticmethod
    def _local_states(spec: ProtocolSpec) -> List[NodeState]:
        if spec.kind == ProtocolKind.TDMA:
            return [NodeState(frame_pos=p) for p in range(1, spec.frame_length + 1)]
        if spec.kind == ProtocolKind.FW_ALOHA:
            return [NodeState(counter=c) for c in range(spec.window)]
        if spec.kind == ProtocolKind.EB_ALOHA:
            return [
                NodeState(counter=c, stage=b)
                for b in range(spec.max_stage + 1)
                for c in range(window_size(spec, b))
            ]
        return [NodeState()]

    def encode(self, states: Sequence[NodeState]) -> int:
        index = 0
        for spec, lookup, radix, state in zip(self.scenario, self.local_index, self.radix, states):
            if spec.kind == ProtocolKind.FW_ALOHA:
                state = NodeState(counter=state.counter)
            elif spec.kind == ProtocolKind.TDMA:
                state = NodeState(frame_pos=state.frame_pos)
            elif spec.kind == ProtocolKind.Q_ALOHA:
                state = NodeState()
            index = index * radix + lookup[state]
        return index

    def decode(self, index: int) -> List[NodeState]:
        states = []
        for radix, local in zip(reversed(self.radix), reversed(self.local_states)):
            index, digit = divmod(index, radix)
            states.append(local[digit])
        return states[::-1]


def _next_local(spec: ProtocolSpec, state: NodeState, transmitted: bool, collision: bool) -> List[Tuple[NodeState, float]]:
    """Distribution of a node's next state, mirroring ``node_decide`` and ``node_feedback``."""
    if spec.kind == ProtocolKind.TDMA:
        return [(NodeState(frame_pos=state.frame_pos % spec.frame_length + 1), 1.0)]
    if spec.kind == ProtocolKind.Q_ALOHA:
        return [(state, 1.0)]
    if not transmitted:
        return [(state.evolve(counter=state.counter - 1), 1.0)]
    if spec.kind == ProtocolKind.FW_ALOHA:
        return [(NodeState(counter=c), 1.0 / spec.window) for c in range(spec.window)]
    stage = min(state.stage + 1, spec.max_stage) if collision else 0
    width = window_size(spec, stage)
    return [(NodeState(counter=c, stage=stage), 1.0 / width) for c in range(width)]


def _deterministic_decision(spec: ProtocolSpec, state: NodeState) -> bool:
    if spec.kind == ProtocolKind.TDMA:
        return state.frame_pos == spec.slot
    return state.counter == 0


def build_genie_mdp(space: JointStateSpace) -> Tuple[List[sparse.csr_matrix], np.ndarray]:
    """Transition matrices ``P[a]`` and expected rewards ``r[a, s]`` for ``a`` in {0, 1}."""
    scenario = space.scenario
    coin_nodes = [i for i, spec in enumerate(scenario) if spec.kind == ProtocolKind.Q_ALOHA]
    if len(coin_nodes) > MAX_COIN_NODES:
        raise UnsupportedScenarioError(f"At most {MAX_COIN_NODES} q-ALOHA nodes are supported")

    coin_patterns = []
    for bits in itertools.product((False, True), repeat=len(coin_nodes)):
        prob = 1.0
        for node, bit in zip(coin_nodes, bits):
            q = scenario[node].q
            prob *= q if bit else 1.0 - q
        if prob > 0.0:
            coin_patterns.append((dict(zip(coin_nodes, bits)), prob))

    n = space.size
    rewards = np.zeros((2, n))
    matrices = []
    for action in (0, 1):
        rows, cols, vals = [], [], []
        for s in range(n):
            states = space.decode(s)
            for coins, prob in coin_patterns:
                decisions = [
                    coins[i] if i in coins else _deterministic_decision(spec, state)
                    for i, (spec, state) in enumerate(zip(scenario, states))
                ]
                transmitters = action + sum(decisions)
                rewards[action, s] += prob * (transmitters == 1)
                collision = transmitters >= 2
                branches = [
                    _next_local(spec, state, decided, collision)
                    for spec, state, decided in zip(scenario, states, decisions)
                ]
                for combo in itertools.product(*branches):
                    p = prob
                    for _, q in combo:
                        p *= q
                    rows.append(s)
                    cols.append(space.encode([state for state, _ in combo]))
                    vals.append(p)
        matrices.append(sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return matrices, rewards


@dataclass
class GenieSolution:
    space: JointStateSpace
    gain: float
    policy: np.ndarray
    bias: np.ndarray
    iterations: int
    converged: bool


def relative_value_iteration(
    matrices: Sequence[sparse.csr_matrix],
    rewards: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    laziness: float = LAZINESS,
) -> Tuple[float, np.ndarray, np.ndarray, int, bool]:
    """
    Average-reward relative value iteration on the lazy chain. Stops when
    the span of ``T h - h`` drops below ``tol``; the gain is the midpoint of
    that span. Returns ``(gain, greedy_policy, bias, iterations, converged)``.
    """
    n = rewards.shape[1]
    identity = sparse.identity(n, format="csr")
    lazy = [laziness * m + (1.0 - laziness) * identity for m in matrices]
    h = np.zeros(n)
    q = rewards.copy()
    low = high = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        q = np.stack([rewards[a] + lazy[a] @ h for a in range(len(lazy))])
        th = q.max(axis=0)
        diff = th - h
        low, high = float(diff.min()), float(diff.max())
        h = th - th[0]
        if high - low < tol:
            converged = True
            break
    if not converged:
        logger.warning(f"Relative value iteration stopped after {max_iter} sweeps with span {high - low:.3e}")
    # ties go to silence
    policy = (q[1] > q[0] + 1e-12).astype(np.int64)
    return 0.5 * (low + high), policy, h, iterations, converged


def solve_genie(scenario: Sequence[ProtocolSpec], tol: float = 1e-10) -> GenieSolution:
    space = JointStateSpace(scenario)
    matrices, rewards = build_genie_mdp(space)
    gain, policy, bias, iterations, converged = relative_value_iteration(matrices, rewards, tol=tol)
    logger.debug(f"Genie MDP for {scenario_label(space.scenario)}: {space.size} states, {iterations} sweeps")
    return GenieSolution(space, gain, policy, bias, iterations, converged)


def genie_value(scenario: Sequence[ProtocolSpec]) -> OracleResult:
    solution = solve_genie(scenario)
    transmit_share = float(solution.policy.mean())
    return OracleResult(
        label=scenario_label(list(scenario)),
        value=float(np.clip(solution.gain, 0.0, 1.0)),
        kind=GENIE,
        policy_sketch=f"greedy on observed node states; transmits in {transmit_share:.0%} of joint states",
        iterations=solution.iterations,
    )


def optimal_throughput(scenario: Sequence[ProtocolSpec]) -> OracleResult:
    """Closed form where one exists, genie value iteration otherwise."""
    if not scenario:
        raise UnsupportedScenarioError("Scenario has no existing nodes")
    result = _analytic(scenario)
    if result is not None:
        return result
    return genie_value(scenario)


def oracle_table(scenarios: Sequence[Sequence[ProtocolSpec]]) -> List[Dict[str, object]]:
    """One row per scenario; unsupported scenarios are flagged instead of raising."""
    rows = []
    for scenario in scenarios:
        try:
            rows.append(optimal_throughput(scenario).to_dict())
        except UnsupportedScenarioError as e:
            logger.warning(f"No oracle for {scenario_label(list(scenario))}: {e.message}")
            rows.append({"scenario": scenario_label(list(scenario)), "value": None, "kind": "unsupported", "policy": e.message})
    return rows


# ----- acting -----

class OraclePolicy:
    """
    Greedy genie policy. Reads the existing nodes' states through
    ``node_states`` before every decision; it never learns.
    """

    def __init__(self, scenario: Sequence[ProtocolSpec], node_states: Callable[[], Sequence[NodeState]]):
        self.solution = solve_genie(scenario)
        self.node_states = node_states

    @classmethod
    def for_environment(cls, env: MacEnvironment) -> "OraclePolicy":
        return cls(env.task.scenario, lambda: env.simulator.node_states)

    @classmethod
    def for_simulator(cls, simulator: ChannelSimulator) -> "OraclePolicy":
        return cls(simulator.scenario, lambda: simulator.node_states)

    def decide(self) -> int:
        return int(self.solution.policy[self.solution.space.encode(self.node_states())])

    def reset_context(self) -> None:
        pass

    def act(self, state: np.ndarray, t: int) -> int:
        return self.decide()

    def observe(self, transition) -> None:
        pass

    def update(self) -> Dict[str, float]:
        return {}
