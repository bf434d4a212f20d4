"""Automated DBMS-tuning pipeline: metric pruning, workload mapping and
latency prediction with GPR, random forest and neural-network backends."""

from .errors import ConfigError, DataError, DbtuneError, NumericalError

__all__ = ["ConfigError", "DataError", "DbtuneError", "NumericalError"]
__version__ = "0.1.0"
