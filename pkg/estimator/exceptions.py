"""
Error types raised by the estimator package.
"""
from typing import Dict, Optional


class IpwqrError(Exception):
    """Base class for every error the package raises on purpose."""


class ParseError(IpwqrError, ValueError):
    """A CSV file could not be read into a model frame."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConfigError(IpwqrError, ValueError):
    """Invalid parameter values or column roles."""


class DomainError(IpwqrError, ValueError):
    """An argument lies outside the domain of a function."""


class NoDataError(IpwqrError, ValueError):
    """No observation carries positive weight."""


class NumericError(IpwqrError, ArithmeticError):
    """Non-finite inputs or a degenerate numerical quantity."""


class ConvergenceError(IpwqrError, RuntimeError):
    """An iterative fit did not converge."""

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class SeparationError(IpwqrError, ValueError):
    """The missingness indicator is perfectly predicted (or constant)."""
