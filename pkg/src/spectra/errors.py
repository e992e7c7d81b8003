"""Exception types shared across the package."""


class SpectraError(Exception):
    """Base class for all library errors."""


class FormatError(SpectraError):
    """A checkpoint file or input table violates its declared format."""


class ShapeMismatchError(SpectraError):
    """Two objects that must share a shape do not."""


class ConvergenceError(SpectraError):
    """An iterative routine hit its sweep cap before converging."""


class TrainingDivergedError(SpectraError):
    """Training produced a non-finite loss; carries the failing step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
