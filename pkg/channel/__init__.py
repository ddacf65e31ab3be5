"""
Channel Package.

Slotted shared-channel simulator, existing-node MAC protocols and the
agent-side MDP (state encoding, reward, throughput windows).
"""

from .exceptions import (
    GmaError,
    ProtocolConfigError,
    EnvironmentUsageError,
    MetricDomainError,
)
from .models import (
    ProtocolKind,
    Observation,
    ProtocolSpec,
    NodeState,
    SlotOutcome,
    parse_scenario,
    scenario_to_string,
    scenario_label,
)
from .simulator import (
    ChannelSimulator,
    node_decide,
    node_feedback,
    resolve_slot,
    simulate,
    trace_throughput,
    write_trace,
    read_trace,
)
from .rewards import (
    throughput_reward,
    fairness_fraction,
    reward,
    jain_index,
)
from .environment import (
    EnvConfig,
    ActionObsPair,
    StateWindow,
    ThroughputWindow,
    ThroughputSummary,
    TaskSpec,
    Transition,
    MacEnvironment,
    encode_state,
)


__all__ = [
    # Exceptions
    "GmaError",
    "ProtocolConfigError",
    "EnvironmentUsageError",
    "MetricDomainError",

    # Models
    "ProtocolKind",
    "Observation",
    "ProtocolSpec",
    "NodeState",
    "SlotOutcome",
    "parse_scenario",
    "scenario_to_string",
    "scenario_label",

    # Simulator
    "ChannelSimulator",
    "node_decide",
    "node_feedback",
    "resolve_slot",
    "simulate",
    "trace_throughput",
    "write_trace",
    "read_trace",

    # Rewards
    "throughput_reward",
    "fairness_fraction",
    "reward",
    "jain_index",

    # Environment
    "EnvConfig",
    "ActionObsPair",
    "StateWindow",
    "ThroughputWindow",
    "ThroughputSummary",
    "TaskSpec",
    "Transition",
    "MacEnvironment",
    "encode_state",
]
