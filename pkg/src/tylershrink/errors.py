"""Exception types shared across the package."""


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be symmetric positive definite is not."""


class ConvergenceError(RuntimeError):
    """Fixed point iteration did not reach the step tolerance.

    Carries the last iterate so callers can inspect how far the
    iteration got before the cap.
    """

    def __init__(self, message, *, last_iterate=None, iterations=0, final_step=float("nan")):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations
        self.final_step = final_step


class CsvFormatError(ValueError):
    """A sample CSV file is malformed (ragged, non numeric, or empty)."""
