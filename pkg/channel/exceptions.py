"""
Custom exceptions for the channel simulator and the MAC environment.

Every error raised by this project derives from ``GmaError`` so callers
(management commands, the experiment runner) can report it uniformly.
"""


class GmaError(Exception):
    """Base exception for simulator, learner and harness errors."""

    def __init__(self, message: str, code: str = "GMA_ERROR", details: dict = None):
        super().__init__(message)
        self.message = message
        self.code = code
        self.details = details or {}

    def to_dict(self) -> dict:
        """Convert to a dictionary for run summaries and CLI output."""
        return {
            "error": {
                "code": self.code,
                "message": self.message,
                "details": self.details,
            }
        }


class ProtocolConfigError(GmaError):
    """Invalid protocol parameters, scenario strings or variant/state mismatch."""

    def __init__(self, message: str = "Invalid protocol configuration.", details: dict = None):
        super().__init__(message, code="CONFIG_ERROR", details=details)


class EnvironmentUsageError(GmaError):
    """Environment used out of order (stepped before reset, past its horizon)."""

    def __init__(self, message: str = "Environment used before reset.", details: dict = None):
        super().__init__(message, code="USAGE_ERROR", details=details)


class MetricDomainError(GmaError):
    """Metric evaluated outside its domain (negative throughput, undefined index)."""

    def __init__(self, message: str = "Metric argument outside its domain.", details: dict = None):
        super().__init__(message, code="DOMAIN_ERROR", details=details)
