"""Exception hierarchy shared across the package."""


class MolMambaError(Exception):
    """Base class for all package errors."""


class ValidationError(MolMambaError, ValueError):
    """Input data violates a documented invariant."""


class ParseError(ValidationError):
    """A molecule or vocabulary record could not be decoded.

    Attributes:
        line: 1-based line number within the source file, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(MolMambaError, ValueError):
    """Operands of a tensor op have incompatible shapes."""


class NumericError(MolMambaError, FloatingPointError):
    """A computation produced NaN or infinity from finite inputs."""
