"""Exception types shared across the package."""


class SweepfuseError(Exception):
    """Base class for all package errors."""


class ShapeError(SweepfuseError, ValueError):
    """Operand extents are incompatible."""


class ConfigError(SweepfuseError, ValueError):
    """A configuration value violates its invariants."""


class ContractError(SweepfuseError, ValueError):
    """A precondition of an operation does not hold."""


class FormatError(SweepfuseError, ValueError):
    """A file does not follow its declared format.

    Attributes:
        offset: byte (or line) position where parsing failed, if known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
