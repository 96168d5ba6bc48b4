"""Exception types shared across the package.

Each maps to a CLI exit code in runner.main: validation-style errors exit 2,
missing stage artifacts exit 3.
"""


class MktError(Exception):
    """Base class for all package errors."""


class DimensionError(MktError):
    """Tensor shapes incompatible with an operation."""


class ValidationError(MktError):
    """Input data, config, or schema violates a contract."""


class ContractError(MktError):
    """An API was called outside its preconditions."""


class ParseError(MktError):
    """A file could not be parsed; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedMetricError(MktError):
    """A ranking metric is undefined for the given records."""


class DependencyError(MktError):
    """A pipeline stage is missing an artifact from an earlier stage."""
