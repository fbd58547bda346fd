"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments; the classes below mark
failures that callers (notably the CLI) need to tell apart.
"""


class FormatError(ValueError):
    """Container file is malformed: bad magic, wrong version, truncated payload."""


class NumericError(RuntimeError):
    """A computation produced non-finite values where finite ones are required."""


class ConfigError(ValueError):
    """Experiment configuration is missing, inconsistent, or out of range."""
