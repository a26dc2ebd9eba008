"""Spectral deconfounding and anchor regression, with doubly debiased Lasso inference."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DeconfoundingError,
    DegenerateProblemError,
    InstabilityError,
    InvalidInputError,
    ParseError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DeconfoundingError",
    "DegenerateProblemError",
    "InstabilityError",
    "InvalidInputError",
    "ParseError",
]
