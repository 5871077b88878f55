"""Error taxonomy shared by the library and the CLI.

Exit-code mapping lives in the CLI: UsageError -> 1, ConfigurationError and
I/O errors -> 2, NumericFailure -> 3.
"""


class UsageError(Exception):
    """An operation was called with arguments outside its contract."""


class ConfigurationError(Exception):
    """Invalid configuration, dataset, or file contents."""


class NumericFailure(Exception):
    """A non-finite value appeared where the math requires finite ones."""
