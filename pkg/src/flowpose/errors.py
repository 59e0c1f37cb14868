"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An operation received structurally invalid input."""


class FormatError(Exception):
    """A file does not conform to its on-disk format.

    ``offset`` is the byte position of the first problem, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(FormatError):
    """A structured-text file violates its schema."""


class NumericalError(RuntimeError):
    """An optimization or check produced non-finite values."""
