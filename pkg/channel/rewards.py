"""
Reward and fairness metrics of the multiple-access MDP.

The reward credits any successful slot and, with fairness factor ``nu``,
discounts it by the share of short-term throughput already held by whoever
used the slot.
"""

from .exceptions import MetricDomainError
from .models import Observation


def throughput_reward(obs: int) -> int:
    """1 when exactly one node transmitted, else 0."""
    if obs not in (Observation.IDLE, Observation.SUCCESS, Observation.COLLISION):
        raise MetricDomainError(f"Observation must be 0, 1 or 2, got {obs}")
    return 1 if obs == Observation.SUCCESS else 0


def fairness_fraction(action: int, s_agent: float, s_existing: float) -> float:
    """
    Share of short-term throughput held by the party that acted.

    Returns 1/2 when both throughputs are zero.
    """
    if s_agent < 0 or s_existing < 0:
        raise MetricDomainError(
            "Short-term throughputs must be non-negative",
            details={"S0": s_agent, "SN": s_existing},
        )
    total = s_agent + s_existing
    if total == 0:
        return 0.5
    return (s_agent if action == 1 else s_existing) / total


def reward(action: int, obs: int, s_agent: float, s_existing: float, nu: float) -> float:
    """``r = r_p * (1 - nu * f)``."""
    if not 0.0 <= nu <= 1.0:
        raise MetricDomainError(f"Fairness factor must lie in [0, 1], got {nu}")
    f = fairness_fraction(action, s_agent, s_existing)
    return throughput_reward(obs) * (1.0 - nu * f)


def jain_index(s_agent: float, s_existing: float) -> float:
    """Two-party Jain fairness index, in [0.5, 1]."""
    if s_agent < 0 or s_existing < 0:
        raise MetricDomainError(
            "Throughputs must be non-negative",
            details={"S0": s_agent, "SN": s_existing},
        )
    squares = s_agent ** 2 + s_existing ** 2
    if squares == 0:
        raise MetricDomainError("Jain index is undefined when both throughputs are zero")
    return (s_agent + s_existing) ** 2 / (2.0 * squares)
