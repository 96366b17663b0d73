"""Exception types raised across the package."""


class DskError(Exception):
    """Base class for all package errors."""


class NotSymmetric(DskError, ValueError):
    pass


class NotPositiveDefinite(DskError, ValueError):
    pass


class DimensionMismatch(DskError, ValueError):
    pass


class UnsupportedKernel(DskError, ValueError):
    pass


class NonPositiveCoefficient(DskError, ValueError):
    pass


class SizeMismatch(DskError, ValueError):
    pass


class ZeroKernel(DskError, ValueError):
    pass


class DegenerateScatter(DskError, ValueError):
    pass


class Infeasible(DskError, ValueError):
    """The QP feasible set holds only the trivial point (e.g. a single-class SVM)."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NotConverged(DskError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The partial solution and the final residual are attached so callers can
    decide whether to accept it.
    """

    def __init__(self, message, residual=float("nan"), solution=None, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.solution = solution
        self.iterations = iterations


class NonFinite(DskError, FloatingPointError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class InsufficientClassSamples(DskError, ValueError):
    pass


class DegenerateCovariance(DskError, ValueError):
    pass


class EmptyTrainingSet(DskError, ValueError):
    pass


class LengthMismatch(DskError, ValueError):
    pass


class FormatError(DskError, ValueError):
    """Malformed dataset, model or image file."""
