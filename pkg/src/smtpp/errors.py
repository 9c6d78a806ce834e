"""Shared exception types.

``ConfigError`` maps to CLI exit code 2 (usage / configuration problems),
``NumericError`` to exit code 3 (non-finite values, aborted optimization).
"""


class ConfigError(ValueError):
    """Invalid configuration, malformed input file, or bad CLI usage."""


class NumericError(RuntimeError):
    """A numeric computation produced non-finite values and was aborted."""
