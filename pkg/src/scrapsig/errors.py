"""Exception hierarchy shared across the pipeline.

Two top-level families matter for the CLI exit codes: ConfigError (bad
configuration, exit 2) and DataError (bad or insufficient data, exit 1).
"""


class ScrapsigError(Exception):
    """Base class for all package errors."""


class ConfigError(ScrapsigError):
    """Invalid configuration: missing columns, bad flags, absent deflators."""


class DataError(ScrapsigError):
    """Input data cannot support the requested operation."""


class InsufficientDataError(DataError):
    """Too few points/rows for the computation. May carry an hs_code."""

    def __init__(self, message: str, hs_code: str | None = None):
        super().__init__(message)
        self.hs_code = hs_code


class UndefinedSlopeError(DataError):
    """All regressor values identical; OLS slope undefined."""


class StratificationError(DataError):
    """A class is too small to stratify into the requested folds."""


class DimensionMismatchError(DataError):
    """Vector dimension does not match the fitted model."""
