"""
The agent's view of the channel as a Markov decision process.

State is the one-hot history of the last L action/observation pairs; the
reward is the fairness-weighted success indicator computed from the
short-term throughput windows, which include the current slot.
"""

import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EnvironmentUsageError, MetricDomainError, ProtocolConfigError
from .models import Observation, ProtocolSpec, parse_scenario, scenario_label, scenario_to_string
from .rewards import jain_index, reward
from .simulator import ChannelSimulator


logger = logging.getLogger(__name__)


# Category order follows the table of legal pairs: idle, other success,
# other collision, own success, own collision.
PAIR_ORDER: Tuple[Tuple[int, int], ...] = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2))
NUM_CATEGORIES = len(PAIR_ORDER)
_PAIR_INDEX = {pair: i for i, pair in enumerate(PAIR_ORDER)}


@dataclass
class EnvConfig:
    """Configuration of the MDP wrapper."""

    history_length: int = field(default_factory=lambda: int(os.getenv("GMA_HISTORY_LENGTH", "20")))
    throughput_window: int = field(default_factory=lambda: int(os.getenv("GMA_THROUGHPUT_WINDOW", "500")))

    def __post_init__(self):
        if self.history_length < 1:
            raise ProtocolConfigError(f"History length must be >= 1, got {self.history_length}")
        if self.throughput_window < 1:
            raise ProtocolConfigError(f"Throughput window must be >= 1, got {self.throughput_window}")

    @property
    def state_dim(self) -> int:
        return self.history_length * NUM_CATEGORIES

    @property
    def context_dim(self) -> int:
        """Width of one flattened (s, a, r, s') context tuple."""
        return 2 * self.state_dim + 2

    @classmethod
    def from_env(cls) -> "EnvConfig":
        return cls()


@dataclass(frozen=True)
class ActionObsPair:
    """One slot of history: the agent's action and the AP's feedback."""

    a: int
    o: int

    def __post_init__(self):
        if (self.a, self.o) not in _PAIR_INDEX:
            raise ProtocolConfigError(
                f"Illegal action/observation pair ({self.a}, {self.o})",
                details={"legal": list(PAIR_ORDER)},
            )

    @property
    def category_index(self) -> int:
        return _PAIR_INDEX[(self.a, self.o)]

    @classmethod
    def from_index(cls, index: int) -> "ActionObsPair":
        return cls(*PAIR_ORDER[index])


IDLE_PAIR = ActionObsPair(0, 0)


class StateWindow:
    """Fixed-length history of action/observation pairs, oldest first."""

    def __init__(self, length: int = 20, pairs: Optional[Iterable[ActionObsPair]] = None):
        self.length = length
        self._pairs: Deque[ActionObsPair] = deque([IDLE_PAIR] * length, maxlen=length)
        for pair in pairs or ():
            self._pairs.append(pair)

    @property
    def pairs(self) -> List[ActionObsPair]:
        return list(self._pairs)

    def push(self, pair: ActionObsPair) -> None:
        self._pairs.append(pair)

    def copy(self) -> "StateWindow":
        return StateWindow(self.length, self._pairs)

    def encode(self) -> np.ndarray:
        return encode_state(self)


def encode_state(window: StateWindow) -> np.ndarray:
    """L one-hot blocks of width 5, oldest block first."""
    vector = np.zeros(window.length * NUM_CATEGORIES, dtype=np.float64)
    for i, pair in enumerate(window.pairs):
        vector[i * NUM_CATEGORIES + pair.category_index] = 1.0
    return vector


class ThroughputWindow:
    """
    Ring buffers of the last Z success flags of the agent and of the
    existing nodes taken together. The divisor is always Z.
    """

    def __init__(self, size: int = 500):
        self.size = size
        self.agent_hits = np.zeros(size, dtype=np.int8)
        self.existing_hits = np.zeros(size, dtype=np.int8)
        self._pos = 0
        self._agent_total = 0
        self._existing_total = 0

    def push(self, agent_hit: bool, existing_hit: bool) -> None:
        self._agent_total += int(agent_hit) - int(self.agent_hits[self._pos])
        self._existing_total += int(existing_hit) - int(self.existing_hits[self._pos])
        self.agent_hits[self._pos] = int(agent_hit)
        self.existing_hits[self._pos] = int(existing_hit)
        self._pos = (self._pos + 1) % self.size

    @property
    def s_agent(self) -> float:
        return self._agent_total / self.size

    @property
    def s_existing(self) -> float:
        return self._existing_total / self.size


@dataclass
class ThroughputSummary:
    """Agent and existing-node success counts over an arbitrary slot span."""

    agent_successes: int = 0
    existing_successes: int = 0
    slots: int = 0

    def record(self, action: int, obs: int) -> None:
        if obs == Observation.SUCCESS:
            if action == 1:
                self.agent_successes += 1
            else:
                self.existing_successes += 1
        self.slots += 1

    @property
    def s_agent(self) -> float:
        return self.agent_successes / self.slots if self.slots else 0.0

    @property
    def s_existing(self) -> float:
        return self.existing_successes / self.slots if self.slots else 0.0

    @property
    def total(self) -> float:
        return self.s_agent + self.s_existing

    @property
    def jain(self) -> Optional[float]:
        try:
            return jain_index(self.s_agent, self.s_existing)
        except MetricDomainError:
            return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slots": self.slots,
            "S0": self.s_agent,
            "SN": self.s_existing,
            "sum": self.total,
            "jain": self.jain,
        }


@dataclass(frozen=True)
class TaskSpec:
    """One coexistence scenario with its fairness factor."""

    scenario: Tuple[ProtocolSpec, ...]
    nu: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scenario", tuple(self.scenario))
        if not self.scenario:
            raise ProtocolConfigError("Task scenario must contain at least one existing node")
        if not 0.0 <= self.nu <= 1.0:
            raise ProtocolConfigError(f"Fairness factor must lie in [0, 1], got {self.nu}")
        if not self.label:
            object.__setattr__(self, "label", scenario_label(list(self.scenario)))

    @classmethod
    def from_string(cls, text: str, nu: float = 0.0, label: str = "") -> "TaskSpec":
        return cls(scenario=tuple(parse_scenario(text)), nu=nu, label=label)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskSpec":
        scenario = data.get("scenario")
        if isinstance(scenario, str):
            specs = parse_scenario(scenario)
        elif isinstance(scenario, (list, tuple)):
            specs = [
                ProtocolSpec.from_string(s) if isinstance(s, str) else ProtocolSpec.from_dict(s)
                for s in scenario
            ]
        else:
            raise ProtocolConfigError("Task record needs a 'scenario' string or list")
        return cls(scenario=tuple(specs), nu=float(data.get("nu", 0.0)), label=data.get("label", ""))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": scenario_to_string(list(self.scenario)),
            "nu": self.nu,
            "label": self.label,
        }

    def with_nu(self, nu: float) -> "TaskSpec":
        return TaskSpec(scenario=self.scenario, nu=nu, label=self.label)


@dataclass(frozen=True)
class Transition:
    """One (s, a, r, s') tuple with encoded states."""

    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray

    def context_vector(self) -> np.ndarray:
        """Flattened ``[s, a, r, s']`` as fed to the encoder."""
        return np.concatenate([self.s, [float(self.a), float(self.r)], self.s_next])


class MacEnvironment:
    """
    Agent-side MDP over a ``ChannelSimulator``.

    ``reset`` must be called before ``step``. With a ``horizon`` the
    environment refuses to step past that many slots.
    """

    def __init__(
        self,
        task: TaskSpec,
        config: Optional[EnvConfig] = None,
        seed: int = 0,
        horizon: Optional[int] = None,
    ):
        self.task = task
        self.config = config or EnvConfig()
        self.seed = int(seed)
        self.horizon = horizon
        self.simulator: Optional[ChannelSimulator] = None
        self.window = StateWindow(self.config.history_length)
        self.throughput = ThroughputWindow(self.config.throughput_window)
        self.t = 0
        self.last_obs: Optional[int] = None
        self.last_reward: float = 0.0

    @property
    def state(self) -> np.ndarray:
        return self.window.encode()

    @property
    def is_reset(self) -> bool:
        return self.simulator is not None

    def reset(self) -> np.ndarray:
        """Fresh channel, all-idle history, empty throughput windows."""
        self.simulator = ChannelSimulator(self.task.scenario, seed=self.seed)
        self.window = StateWindow(self.config.history_length)
        self.throughput = ThroughputWindow(self.config.throughput_window)
        self.t = 0
        self.last_obs = None
        self.last_reward = 0.0
        return self.state

    def swap_scenario(self, scenario: Sequence[ProtocolSpec], label: str = "") -> None:
        """Hot-swap the existing nodes without touching history or windows."""
        if not self.is_reset:
            raise EnvironmentUsageError("Cannot swap the scenario of an environment that was never reset")
        self.task = TaskSpec(scenario=tuple(scenario), nu=self.task.nu, label=label)
        self.simulator.swap_scenario(scenario)

    def step(self, action: int) -> Tuple[int, float, np.ndarray]:
        """Play one slot; returns ``(obs, r, s_next)``."""
        if not self.is_reset:
            raise EnvironmentUsageError("step() called before reset()")
        if self.horizon is not None and self.t >= self.horizon:
            raise EnvironmentUsageError(
                f"Environment finished after {self.horizon} slots; call reset()",
                details={"horizon": self.horizon},
            )
        if action not in (0, 1):
            raise EnvironmentUsageError(f"Action must be 0 or 1, got {action}")

        outcome = self.simulator.step(bool(action))
        obs = int(outcome.obs)
        success = obs == Observation.SUCCESS
        self.throughput.push(success and action == 1, success and action == 0)

        r = reward(action, obs, self.throughput.s_agent, self.throughput.s_existing, self.task.nu)

        self.window.push(ActionObsPair(action, obs))
        self.t += 1
        self.last_obs = obs
        self.last_reward = r
        return obs, r, self.state

    def metrics(self) -> Dict[str, Any]:
        """Per-slot record ``{t, S0, SN, sum, jain}``; jain is None when undefined."""
        s_agent = self.throughput.s_agent
        s_existing = self.throughput.s_existing
        try:
            jain = jain_index(s_agent, s_existing)
        except MetricDomainError:
            jain = None
        return {
            "t": self.t,
            "S0": s_agent,
            "SN": s_existing,
            "sum": s_agent + s_existing,
            "jain": jain,
        }
