"""
Custom exceptions for the differentiable core and the learner networks.
"""

from channel.exceptions import GmaError


class ShapeMismatchError(GmaError):
    """Operand or parameter shapes are incompatible."""

    def __init__(self, message: str = "Shape mismatch.", details: dict = None):
        super().__init__(message, code="SHAPE_MISMATCH", details=details)


class TapeUsageError(GmaError):
    """Backward requested for a computation that was never recorded."""

    def __init__(self, message: str = "Backward called without a recorded forward pass.", details: dict = None):
        super().__init__(message, code="TAPE_USAGE", details=details)


class NonFiniteError(GmaError):
    """NaN or infinity in a loss, network output or gradient."""

    def __init__(self, message: str = "Non-finite value encountered.", details: dict = None):
        super().__init__(message, code="NON_FINITE", details=details)


class CheckpointError(GmaError):
    """Checkpoint missing, unreadable or written by an incompatible version."""

    def __init__(self, message: str = "Invalid checkpoint.", details: dict = None):
        super().__init__(message, code="CHECKPOINT_ERROR", details=details)


class EmptyBatchError(GmaError):
    """A loss or the encoder was given no transitions."""

    def __init__(self, message: str = "Batch or context is empty.", details: dict = None):
        super().__init__(message, code="EMPTY_BATCH", details=details)
