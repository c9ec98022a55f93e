"""Exception hierarchy shared across the toolkit."""


class TractLabelError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(TractLabelError, ValueError):
    pass


class OutOfBoundsError(TractLabelError, ValueError):
    pass


class DegenerateInputError(TractLabelError, ValueError):
    pass


class InsufficientDirectionsError(TractLabelError, ValueError):
    pass


class UnsampleableError(TractLabelError, ValueError):
    pass


class ShapeError(TractLabelError, ValueError):
    pass


class FormatError(TractLabelError):
    """Malformed file; ``offset`` is the byte (or row) position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(TractLabelError, FloatingPointError):
    pass
