"""Exception hierarchy shared by the anisopt modules."""

from typing import Any, Optional


class AnisoptError(Exception):
    """Base class for all errors raised by anisopt."""


class ConfigurationError(AnisoptError, ValueError):
    """Invalid, missing, unknown or out-of-range configuration."""


class SolverError(AnisoptError, RuntimeError):
    """A numerical solve failed in a way that cannot be reported as data."""

    def __init__(self, message: str, partial: Optional[Any] = None) -> None:
        super().__init__(message)
        self.partial = partial


class OptimizationError(AnisoptError, RuntimeError):
    """The optimizer could not produce any valid evaluation."""
