"""Exception taxonomy shared across the package."""


class NtkLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NtkLabError):
    """Invalid configuration: bad key, bad value, or inconsistent settings."""


class UsageError(NtkLabError):
    """API misuse: wrong call order, stale tape, unknown metric name."""


class DataError(NtkLabError):
    """Malformed or inconsistent input data (truncated files, bad labels)."""


class VersionError(DataError):
    """A persisted artifact carries an unexpected schema version."""


class NumericalError(NtkLabError):
    """Non-finite values or a numerical routine that failed to converge."""


class DivergenceError(NumericalError):
    """Training loss became non-finite; the run is poisoned."""


class UndefinedSimilarityError(NumericalError):
    """Kernel similarity is undefined (zero-norm operand)."""
