"""Exception hierarchy shared across the toolkit.

The command-line layer maps these onto process exit codes:
ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ToolkitError):
    """Invalid configuration value or malformed config file."""


class DataError(ToolkitError):
    """Input data violates the expected schema or an invariant."""


class NumericError(ToolkitError):
    """Numerical failure: non-finite loss, Cholesky breakdown, bad shapes."""
