"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: ``ConfigError`` -> 2,
``FormatError``/``DataError`` -> 3, ``NumericError`` -> 4.
"""


class CsiError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CsiError, ValueError):
    """Invalid configuration or unknown pipeline step."""


class DataError(CsiError, ValueError):
    """Input data violates an operation's precondition."""


class FormatError(DataError):
    """Malformed binary or text file.

    ``offset`` is the byte offset at which parsing failed.
    """

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericError(CsiError, ArithmeticError):
    """A numerical routine could not produce a meaningful result."""


class NoMotionDetected(DataError):
    """The autocorrelation shows no oscillation within the searched lags."""
