"""
Error hierarchy for the exit-problem toolkit.

Each subclass maps to one CLI exit code (see main_orchestrator.EXIT_CODES).
"""


class RareExitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RareExitError):
    """Malformed or inconsistent configuration (TOML/YAML)."""


class ValidationError(RareExitError):
    """A system, domain, target or plan failed its assumption checks."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class QuadratureError(RareExitError):
    """Adaptive quadrature did not reach the requested tolerance."""


class FlowError(RareExitError):
    """Deterministic orbit failed to reach the requested surface within the horizon."""


class NonExitError(FlowError):
    """Raised when a trajectory is required to exit but did not."""


class NullEventError(RareExitError):
    """Conditioning on an event whose limit measure is zero."""


class UnderpoweredError(RareExitError):
    """Not enough data for the requested statistic."""


class StorageError(RareExitError):
    """Missing or corrupt campaign files."""
