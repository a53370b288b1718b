"""Exception and warning types shared across fastmetric."""


class FastMetricError(Exception):
    """Base class for all fastmetric errors."""


class InvalidInputError(FastMetricError, ValueError):
    pass


class NumericFailureError(FastMetricError, ArithmeticError):
    pass


class InvalidStateError(FastMetricError, RuntimeError):
    pass


class ParseError(InvalidInputError):
    """Malformed file contents. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class BadMagicError(ParseError):
    pass


class TruncatedFileError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


class PairShortfallWarning(UserWarning):
    """An instance had fewer eligible partners than requested."""


class StandardizationWarning(UserWarning):
    """Targets handed to the regressor do not look standardized."""
