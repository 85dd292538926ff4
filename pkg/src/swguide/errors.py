"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its fixed contract (2 bad input, 3 config, 4 numeric).
"""


class SwError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class InputError(SwError, ValueError):
    """Malformed, unreadable or inconsistent input data."""

    exit_code = 2


class EmptyDistributionError(InputError):
    pass


class SampleCountError(InputError):
    """Two distributions were given with unequal numbers of samples."""


class UnreadableFileError(InputError):
    code = "unreadable"


class UnsupportedFormatError(InputError):
    code = "unsupported-format"


class CorruptHeaderError(InputError):
    code = "corrupt-header"


class ConfigError(SwError, ValueError):
    """Invalid configuration value or combination."""

    exit_code = 3


class NumericError(SwError, ArithmeticError):
    """A computation produced a non-finite value."""

    exit_code = 4
