"""Exception hierarchy shared across the toolkit.

Exit codes used by the command line map directly onto these classes:
configuration problems exit with 2, data problems with 3, anything else
with 1.
"""

__all__ = [
    "RefselError",
    "ConfigError",
    "DataError",
    "SamplerError",
    "EstimationError",
    "UndefinedMetricError",
]


class RefselError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(RefselError):
    """Invalid configuration value or malformed config file."""

    exit_code = 2


class DataError(RefselError):
    """Missing, malformed, or non-finite input data."""

    exit_code = 3


class SamplerError(RefselError):
    """MCMC state became non-finite or a sampler precondition failed."""


class EstimationError(RefselError):
    """An iterative estimator (IRLS, coordinate descent) failed to converge."""


class UndefinedMetricError(RefselError):
    """A metric was requested on inputs where it has no defined value."""
