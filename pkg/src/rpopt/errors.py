"""Exception types shared across the package."""


class RpoptError(Exception):
    """Base class for package-specific failures."""


class DataFormatError(RpoptError, ValueError):
    """A data file is malformed (bad header, bad row, bad magic number)."""


class InvalidRegimeError(RpoptError, ValueError):
    """Bound inputs violate a precondition of the regime being evaluated.

    The message names the violated inequality so callers can report it.
    """


class DivergenceError(RpoptError, RuntimeError):
    """Training produced a non-finite iterate or loss.

    Attributes:
        step: 1-indexed optimization step at which divergence was detected.
    """

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class SingularityError(RpoptError, ValueError):
    """An operation was requested at a point where it is undefined
    (e.g. curvature of the robust loss at theta = 0)."""


class ExperimentError(RpoptError, RuntimeError):
    """An experiment stage failed; the message names the stage.  Partial
    artifacts have already been removed when this is raised."""
