"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class BvqaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BvqaError):
    """Bad or contradictory configuration (unknown keys, invalid values)."""

    exit_code = 2


class DataError(BvqaError):
    """Malformed input data: tensor files, manifests, mismatched shapes on disk."""

    exit_code = 3


class NumericError(BvqaError):
    """Numeric failure: NaN/Inf encountered, domain violations, divergence."""

    exit_code = 4
