"""Exception types raised across the package."""

from __future__ import annotations


class SveliftError(Exception):
    """Base class for all package errors."""


class AssumptionViolation(SveliftError):
    """The weighted mass of the Bernstein measure could not be certified finite."""

    def __init__(self, message: str, *, partial: float | None = None, tail: float | None = None):
        super().__init__(message)
        self.partial = partial
        self.tail = tail


class BalanceFailure(SveliftError):
    """A schedule was requested for a kernel/modulus pair violating the balance condition."""

    def __init__(self, message: str, *, report=None):
        super().__init__(message)
        self.report = report


class CertificationError(SveliftError):
    """A modulus cannot certify a requested mollification bandwidth."""


class SimulationAbort(SveliftError):
    """A single path produced non-finite values or a singular solve."""

    def __init__(self, message: str, *, path: int | None = None, step: int | None = None):
        super().__init__(message)
        self.path = path
        self.step = step


class ConfigError(SveliftError):
    """Invalid experiment configuration. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ScheduleSearchError(SveliftError):
    """The truncation ladder was exhausted before the admissibility constraints held."""
