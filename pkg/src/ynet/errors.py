"""Exception types shared across the package.

The CLI maps these onto its exit codes: usage problems exit 1, bad data or
files exit 2, failed internal checks exit 3.
"""


class YNetError(Exception):
    """Base class for every error raised deliberately by ynet."""


class ConfigError(YNetError, ValueError):
    """Inconsistent shapes, hyperparameters or architecture settings."""


class UsageError(YNetError, ValueError):
    """A call that is well-formed but not allowed in the current state."""


class FormatError(YNetError, ValueError):
    """A file on disk does not match the expected layout."""


class TrainingDiverged(YNetError, RuntimeError):
    """Loss became NaN or infinite during training."""
