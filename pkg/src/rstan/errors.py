"""Exception hierarchy shared by every module.

The CLI maps :class:`ContractError` to exit code 1 and :class:`NumericError`
to exit code 2.
"""


class RstanError(Exception):
    """Base class for all package errors."""


class ContractError(RstanError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class ConfigError(ContractError):
    """A model or run configuration is inconsistent."""


class FormatError(ContractError):
    """A serialized file is malformed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(ContractError):
    """A metric is undefined for the given inputs (e.g. AUC with one class)."""


class NumericError(RstanError, ArithmeticError):
    """A NaN/Inf appeared, or a computation is numerically degenerate."""


class DegenerateSignalError(NumericError):
    """Pearson correlation requested for a zero-variance signal."""
