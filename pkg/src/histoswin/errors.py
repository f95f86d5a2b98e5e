"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage/config problems exit 1, data and
shape problems exit 2, numeric failures exit 3.
"""


class HistoSwinError(Exception):
    """Base class for all package errors."""


class ConfigError(HistoSwinError, ValueError):
    """Invalid configuration values."""


class ContractError(HistoSwinError, ValueError):
    """A documented precondition of an operation was violated."""


class BudgetError(ContractError):
    """Requested computation exceeds a documented enumeration budget."""


class ShapeError(HistoSwinError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class DataError(HistoSwinError, ValueError):
    """Input data is missing, empty, malformed or cannot be partitioned."""


class ImageReadError(DataError, OSError):
    """An image file could not be decoded."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


class CheckpointError(DataError):
    """A checkpoint file is invalid or incompatible with a model config."""


class NumericError(HistoSwinError, ArithmeticError):
    """A non-finite value appeared in a computation."""
