"""Exception types shared across the package."""


class GeomnetsError(Exception):
    """Base class for all package errors."""


class ContractError(GeomnetsError):
    """An argument violated a documented precondition."""


class ShapeError(ContractError):
    """Operands have incompatible shapes."""


class NumericError(GeomnetsError):
    """A non-finite value appeared during computation."""


class ParseError(GeomnetsError):
    """A serialized record could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
