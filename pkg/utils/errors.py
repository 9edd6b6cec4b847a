"""
Exception hierarchy for nvdephase and its mapping onto CLI exit codes.
"""
from typing import Any, Dict, Optional

from pydantic import ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SAMPLING = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


class NvDephaseError(Exception):
    """Base class for all errors raised by nvdephase."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class DomainError(NvDephaseError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(NvDephaseError, ValueError):
    """A run or sampler configuration is invalid."""


class DataFormatError(NvDephaseError, ValueError):
    """
    A dataset could not be ingested.

    Attributes:
        row: Zero-based data row index of the offending record, if known.
        column: Column name of the offending value, if known.
        line: One-based line number in the source file, if known.
    """

    def __init__(
        self,
        message: str,
        row: Optional[int] = None,
        column: Optional[str] = None,
        line: Optional[int] = None,
    ):
        details = {k: v for k, v in (("row", row), ("column", column), ("line", line)) if v is not None}
        super().__init__(message, details)
        self.row = row
        self.column = column
        self.line = line


class SamplingError(NvDephaseError, RuntimeError):
    """A sampler could not start or aborted."""


class ConvergenceError(SamplingError):
    """Chains failed the convergence check and summaries were refused."""


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to the stable CLI exit-code contract.

    Args:
        exc: The exception that ended the command.

    Returns:
        1 for validation failures, 2 for sampling failures, 3 for I/O failures and
        4 for any other (internal) error.
    """
    if isinstance(exc, SamplingError):
        return EXIT_SAMPLING
    if isinstance(exc, (DomainError, DataFormatError, ConfigError, ValidationError)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ValueError):
        return EXIT_VALIDATION
    return EXIT_INTERNAL
