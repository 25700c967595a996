"""Exception types shared across the package."""


class EqopError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(EqopError, ValueError):
    """An input value violates a documented precondition."""


class DimensionError(EqopError, ValueError):
    """Array or operator dimensions are incompatible."""


class UnsupportedError(EqopError):
    """A configuration is well-formed but outside the supported families."""


class InconsistencyError(EqopError):
    """A derived structure contradicts itself (e.g. a bad orbit partition)."""


class ParseError(EqopError):
    """A binary or text input could not be decoded.

    Carries the byte offset at which decoding failed when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
