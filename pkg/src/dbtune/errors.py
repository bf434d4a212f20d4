"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class DbtuneError(Exception):
    """Base class for all package errors."""


class ConfigError(DbtuneError):
    """Bad CLI usage or configuration file."""


class DataError(DbtuneError):
    """Malformed or insufficient input data."""


class NumericalError(DbtuneError):
    """A numerical routine failed (non-finite values, factorization failure)."""
