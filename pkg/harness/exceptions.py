"""
Custom exceptions for the meta-training and meta-testing harness.
"""

from channel.exceptions import GmaError


class HarnessUsageError(GmaError):
    """Schedule, buffer or policy used with inconsistent arguments."""

    def __init__(self, message: str = "Invalid harness usage.", details: dict = None):
        super().__init__(message, code="USAGE_ERROR", details=details)


class MissingCheckpointError(GmaError):
    """Meta-testing asked for a checkpoint directory that does not exist."""

    def __init__(self, message: str = "Checkpoint not found.", details: dict = None):
        super().__init__(message, code="MISSING_CHECKPOINT", details=details)
