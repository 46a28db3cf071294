"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed arguments: bad shapes, non-finite values, out-of-range parameters."""


class ConfigError(InvalidInputError):
    """A run configuration file or override string failed validation."""


class UnsupportedDecompositionError(InvalidInputError):
    """The requested spectral decomposition does not exist for this kernel family."""


class ExplorationInfeasibleError(RuntimeError):
    """Approximation quality too poor for a valid exploration schedule (kappa >= 1/3)."""


class ScheduleUndefinedError(InvalidInputError):
    """Inducing-size schedule undefined for the requested smoothness/dimension."""


class NumericalDegeneracyError(RuntimeError):
    """A matrix factorization or variance computation degenerated beyond repair."""
