"""Exception hierarchy shared across the pipeline.

Exit-code mapping (see cli): UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class LongsumError(Exception):
    """Base class for package errors."""


class UsageError(LongsumError):
    """Bad command-line arguments or configuration."""


class DataError(LongsumError):
    """Malformed or missing input data / artifacts."""


class NumericError(LongsumError):
    """Non-finite values or numerical divergence."""
