"""Exception hierarchy shared by every nmc module."""


class NmcError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(NmcError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateEntryError(NmcError, ValueError):
    pass


class RangeError(NmcError, ValueError):
    pass


class EmptyMatrixError(NmcError, ValueError):
    pass


class SplitError(NmcError, ValueError):
    """The requested split cannot be used for training."""


class ShapeError(NmcError, ValueError):
    pass


class BatchTooSmallError(NmcError, ValueError):
    pass


class InputTooShortError(NmcError, ValueError):
    pass


class ConfigError(NmcError, ValueError):
    pass


class DivergedError(NmcError, ArithmeticError):
    pass


class NoDataError(NmcError, ValueError):
    pass


class FormatError(NmcError, ValueError):
    """A file does not carry the expected magic or version."""


class CorruptionError(NmcError, ValueError):
    """A file is truncated or fails its checksum."""
