"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes or class counts do not line up."""


class FeatureFileError(ValidationError):
    """A feature file cannot be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(RuntimeError):
    """The one-shot federation contract was violated."""


class NumericError(ArithmeticError):
    """Training or evaluation produced non-finite numbers."""
