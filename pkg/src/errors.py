"""Exception types shared by the data, network and estimation modules.

Validation problems derive from ``ChoiceDataError`` (a ``ValueError``) so that
callers which only know about ``ValueError`` keep working. The CLI maps the
two families to distinct exit codes (see ``src/cli.py``).
"""

from __future__ import annotations

from typing import Optional


class ChoiceDataError(ValueError):
    """Base class for input validation failures."""


class SchemaError(ChoiceDataError):
    """A required column is missing, unknown, or bound to the wrong role."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class ParseError(ChoiceDataError):
    """A cell could not be parsed as a number."""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class ChoiceValidationError(ChoiceDataError):
    """A chosen alternative index lies outside 1..J."""


class DegenerateColumnError(ChoiceDataError):
    """A column (or the pooled cost group) has max == min."""

    def __init__(self, message: str, column: str):
        super().__init__(message)
        self.column = column


class DimensionError(ChoiceDataError):
    """Array shapes do not match the layer or schema they are fed to."""


class DomainError(ChoiceDataError):
    """A log-transformed attribute is not strictly positive after the offset."""


class NumericalError(ArithmeticError):
    """Non-finite utilities, probabilities or gradients."""
