"""Exception hierarchy shared by every stage of the analysis."""


class AcceleraError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(AcceleraError, ArithmeticError):
    """Arithmetic requested outside an operation's domain (e.g. dividing by an interval holding 0)."""


class DecompositionError(AcceleraError):
    """The numerical Jordan decomposition could not be formed or certified."""


class EmptySetError(AcceleraError):
    """A support function was requested on an empty set."""


class NumericError(AcceleraError):
    """A linear program or other numerical kernel failed."""


class DivergenceError(AcceleraError):
    """An infinite-horizon quantity does not converge."""


class UnboundedError(AcceleraError):
    """A set that must be bounded is unbounded in some direction."""


class ModelError(AcceleraError):
    """A loop model is malformed (dimension mismatch, zero guard row, empty set...).

    ``line`` and ``column`` are 1-based source positions when the model came from text.
    """

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            message = f"{line}:{column if column is not None else 1}: {message}"
        super().__init__(message)


class AnalysisError(AcceleraError):
    """Wraps a failure during :func:`accelera.acceleration.accelerate` with the stage it happened in."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"analysis failed during {stage}: {cause}")
