"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class DeconfoundingError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(DeconfoundingError, ValueError):
    """Input has the wrong shape or holds non-finite or out-of-range values."""


class DegenerateProblemError(DeconfoundingError, ArithmeticError):
    """The numerical problem has no (unique) solution, e.g. a singular system."""


class InstabilityError(DegenerateProblemError):
    """A denominator collapsed to (numerical) zero."""


class ParseError(DeconfoundingError):
    """A data file could not be read."""


class ConfigError(DeconfoundingError):
    """A run configuration is incomplete or contains unknown keys."""
