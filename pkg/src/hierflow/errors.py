"""Exception types shared across the package."""


class HierflowError(Exception):
    """Base class for all package errors."""


class InvalidParameter(HierflowError, ValueError):
    """A parameter is outside its admissible range."""


class InvalidMeasure(InvalidParameter):
    """The single-site measure cannot drive the flow (e.g. a(0) = 0)."""


class NumericalFailure(HierflowError, RuntimeError):
    """An iteration did not converge or a guard tripped.

    ``last`` carries the last iterate when one is available.
    """

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


class TruncationError(NumericalFailure):
    """A Fourier or path-state truncation is too coarse for the requested accuracy."""


class InconsistencyError(NumericalFailure):
    """Two independent computations of the same quantity disagree."""
