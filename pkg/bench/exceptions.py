"""
Exceptions raised while resolving experiment configurations.
"""

from channel.exceptions import GmaError


class ExperimentConfigError(GmaError):
    """Experiment file unreadable or inconsistent with the requested command."""

    def __init__(self, message: str = "Invalid experiment configuration.", details: dict = None):
        super().__init__(message, code="INVALID_CONFIG", details=details)


class UnknownPresetError(GmaError):
    """No task set or change schedule is registered under the given name."""

    def __init__(self, message: str = "Unknown preset.", details: dict = None):
        super().__init__(message, code="UNKNOWN_PRESET", details=details)
