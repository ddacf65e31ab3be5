"""
Custom exceptions for the baselines and throughput oracles.
"""

from channel.exceptions import GmaError


class UnsupportedScenarioError(GmaError):
    """No oracle can be computed for the scenario (unknown protocol, state space too large)."""

    def __init__(self, message: str = "Scenario not supported by the oracle.", details: dict = None):
        super().__init__(message, code="UNSUPPORTED_SCENARIO", details=details)
