"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A hyperparameter or config value is outside its valid domain."""


class StructuralError(ValueError):
    """Inputs have incompatible shapes/lengths, or a graph op is unsupported."""


class DegenerateInputError(ValueError):
    """Inputs are numerically degenerate (zero-norm vectors, out-of-range scores)."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. no positive labels)."""


class NumericsError(RuntimeError):
    """Training produced a non-finite loss; carries the diagnostic snapshot path."""

    def __init__(self, message: str, snapshot_path: str | None = None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
