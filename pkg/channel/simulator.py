"""
Slot-level simulator of the shared channel.

Existing nodes run q-ALOHA, FW-ALOHA, EB-ALOHA or TDMA; the agent node
(index 0) is driven by a caller-supplied decision. Every existing node draws
from its own random stream derived from the master seed and its node index,
so adding a node never perturbs the draws of another.
"""

import json
import logging
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ProtocolConfigError
from .models import NodeState, Observation, ProtocolKind, ProtocolSpec, SlotOutcome


logger = logging.getLogger(__name__)


def node_rng(seed: int, node_index: int, generation: int = 0) -> np.random.Generator:
    """Dedicated random stream of one existing node."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(node_index, generation)))


def window_size(spec: ProtocolSpec, stage: int = 0) -> int:
    """Current contention window of a window-based ALOHA node."""
    if spec.kind == ProtocolKind.EB_ALOHA:
        return (2 ** stage) * spec.window
    return spec.window


def _check_state(spec: ProtocolSpec, state: NodeState) -> None:
    if spec.kind in (ProtocolKind.FW_ALOHA, ProtocolKind.EB_ALOHA):
        stage = state.stage if spec.kind == ProtocolKind.EB_ALOHA else 0
        if spec.kind == ProtocolKind.EB_ALOHA and not 0 <= stage <= spec.max_stage:
            raise ProtocolConfigError(
                f"Backoff stage {stage} outside 0..{spec.max_stage}",
                details={"protocol": spec.to_string(), "stage": stage},
            )
        if not 0 <= state.counter < window_size(spec, stage):
            raise ProtocolConfigError(
                f"Counter {state.counter} outside current window of {spec.to_string()}",
                details={"protocol": spec.to_string(), "counter": state.counter},
            )
    elif spec.kind == ProtocolKind.TDMA and not 1 <= state.frame_pos <= spec.frame_length:
        raise ProtocolConfigError(
            f"Frame position {state.frame_pos} outside 1..{spec.frame_length}",
            details={"protocol": spec.to_string(), "frame_pos": state.frame_pos},
        )


def initial_state(spec: ProtocolSpec, rng: np.random.Generator, t: int = 0) -> NodeState:
    """
    Cold-start state at slot ``t``.

    Window counters are drawn as if the node had just transmitted; TDMA frames
    are aligned to the global slot index so frame position 1 falls on ``t = 0``.
    """
    if spec.kind in (ProtocolKind.FW_ALOHA, ProtocolKind.EB_ALOHA):
        return NodeState(counter=int(rng.integers(0, spec.window)), stage=0)
    if spec.kind == ProtocolKind.TDMA:
        return NodeState(frame_pos=(t % spec.frame_length) + 1)
    return NodeState()


def node_decide(
    spec: ProtocolSpec,
    state: NodeState,
    rng: np.random.Generator,
) -> Tuple[bool, NodeState]:
    """
    Decide whether the node transmits in the current slot.

    Returns the decision and the staged state (counter decrement or frame
    advance). Window redraws after a transmission happen in ``node_feedback``.
    """
    _check_state(spec, state)

    if spec.kind == ProtocolKind.Q_ALOHA:
        return bool(rng.random() < spec.q), state

    if spec.kind == ProtocolKind.TDMA:
        transmit = state.frame_pos == spec.slot
        return transmit, state.evolve(frame_pos=state.frame_pos % spec.frame_length + 1)

    # FW/EB-ALOHA: transmit when the counter has expired
    if state.counter == 0:
        return True, state
    return False, state.evolve(counter=state.counter - 1)


def node_feedback(
    spec: ProtocolSpec,
    state: NodeState,
    transmitted: bool,
    outcome: SlotOutcome,
    rng: np.random.Generator,
) -> NodeState:
    """Apply the AP feedback of a resolved slot to the staged state."""
    if not transmitted or spec.kind in (ProtocolKind.Q_ALOHA, ProtocolKind.TDMA):
        return state

    if spec.kind == ProtocolKind.FW_ALOHA:
        return state.evolve(counter=int(rng.integers(0, spec.window)))

    if outcome.obs == Observation.COLLISION:
        stage = min(state.stage + 1, spec.max_stage)
    else:
        stage = 0
    return NodeState(counter=int(rng.integers(0, window_size(spec, stage))), stage=stage)


def resolve_slot(decisions: Sequence[bool]) -> SlotOutcome:
    """
    Resolve one slot from the per-node decisions (agent first).

    Mirrors the AP broadcast: nothing on idle, ACK for a lone transmitter,
    NACK on collision.
    """
    if len(decisions) == 0:
        raise ProtocolConfigError("Cannot resolve a slot without decisions")

    tx_set = frozenset(i for i, d in enumerate(decisions) if d)
    if not tx_set:
        return SlotOutcome(tx_set=tx_set, obs=Observation.IDLE)
    if len(tx_set) == 1:
        return SlotOutcome(tx_set=tx_set, obs=Observation.SUCCESS, success_node=next(iter(tx_set)))
    return SlotOutcome(tx_set=tx_set, obs=Observation.COLLISION)


class ChannelSimulator:
    """
    Stateful simulator of the existing nodes sharing the channel with the agent.

    Single-threaded; independent instances may be driven from different threads.
    """

    def __init__(self, scenario: Sequence[ProtocolSpec], seed: int = 0):
        self.seed = int(seed)
        self.t = 0
        self._generation = 0
        self._install(scenario)

    def _install(self, scenario: Sequence[ProtocolSpec]) -> None:
        self.scenario: List[ProtocolSpec] = list(scenario)
        self.rngs = [
            node_rng(self.seed, index, self._generation)
            for index in range(1, len(self.scenario) + 1)
        ]
        self.node_states: List[NodeState] = [
            initial_state(spec, rng, self.t) for spec, rng in zip(self.scenario, self.rngs)
        ]

    @property
    def num_nodes(self) -> int:
        return len(self.scenario)

    def swap_scenario(self, scenario: Sequence[ProtocolSpec]) -> None:
        """Replace the existing-node set in place (dynamic environments)."""
        self._generation += 1
        logger.info(
            f"Swapping scenario at t={self.t}: "
            f"{'+'.join(s.label for s in self.scenario)} -> {'+'.join(s.label for s in scenario)}"
        )
        self._install(scenario)

    def step(self, agent_tx: bool) -> SlotOutcome:
        """Advance one slot with the agent's decision."""
        decisions = [bool(agent_tx)]
        staged = []
        for spec, state, rng in zip(self.scenario, self.node_states, self.rngs):
            transmit, next_state = node_decide(spec, state, rng)
            decisions.append(transmit)
            staged.append(next_state)

        outcome = resolve_slot(decisions)

        self.node_states = [
            node_feedback(spec, state, decisions[i + 1], outcome, rng)
            for i, (spec, state, rng) in enumerate(zip(self.scenario, staged, self.rngs))
        ]
        self.t += 1
        return outcome


AgentPolicy = Callable[[int], bool]


def simulate(
    scenario: Sequence[ProtocolSpec],
    agent_policy: AgentPolicy,
    slots: int,
    seed: int = 0,
) -> List[SlotOutcome]:
    """Run ``slots`` slots and return the trace of resolved outcomes."""
    if slots < 0:
        raise ProtocolConfigError(f"Slot count must be non-negative, got {slots}")

    simulator = ChannelSimulator(scenario, seed=seed)
    return [simulator.step(agent_policy(t)) for t in range(slots)]


def trace_throughput(trace: Sequence[SlotOutcome]) -> Tuple[float, float]:
    """Agent and existing-node success fractions of a trace."""
    if not trace:
        return 0.0, 0.0
    agent = sum(1 for o in trace if o.success_node == 0)
    existing = sum(1 for o in trace if o.success_node is not None and o.success_node != 0)
    return agent / len(trace), existing / len(trace)


def write_trace(trace: Iterable[SlotOutcome], path: Union[str, Path], start: int = 0) -> int:
    """Write one JSON record per slot; returns the number of records written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for t, outcome in enumerate(trace, start=start):
            fh.write(json.dumps(outcome.to_record(t)) + "\n")
            count += 1
    return count


def read_trace(path: Union[str, Path]) -> List[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def always(_: int) -> bool:
    return True


def never(_: int) -> bool:
    return False


def random_policy(probability: float = 0.5, seed: Optional[int] = None) -> AgentPolicy:
    """Agent that transmits with a fixed probability, on its own stream."""
    rng = node_rng(0 if seed is None else seed, 0)
    return lambda _t: bool(rng.random() < probability)
