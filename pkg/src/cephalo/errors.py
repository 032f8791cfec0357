"""Exception hierarchy shared by every cephalo module."""


class CephaloError(Exception):
    """Base class for all package errors."""


class ConfigError(CephaloError):
    """Invalid configuration or argument values."""


class DataError(CephaloError):
    """Input data is missing, malformed or inconsistent."""


class ParseError(DataError):
    """A text or binary file could not be parsed.

    ``line`` is the 1-based line number when the failure is tied to one.
    """

    def __init__(self, message, line=None, path=None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.path = path

    def __str__(self):
        where = "" if self.path is None else str(self.path)
        if self.line is not None:
            where += f":{self.line}" if where else f"line {self.line}"
        return f"{where}: {self.message}" if where else self.message


class UnsupportedFormatError(DataError):
    """A file uses a feature outside the supported subset."""


class SizeMismatchError(DataError):
    """Payload size disagrees with what the header declares."""


class InvariantError(CephaloError):
    """An internal consistency check failed."""
