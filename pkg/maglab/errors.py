"""Exception hierarchy for maglab.

Every error also derives from the matching builtin so callers can catch
``ValueError`` for rejected inputs and ``RuntimeError`` for numerical failures.
"""


class MaglabError(Exception):
    """Base class for all maglab errors."""


class InvalidParamsError(MaglabError, ValueError):
    pass


class PartitionInfeasibleError(MaglabError, RuntimeError):
    pass


class InsufficientDisksError(MaglabError, RuntimeError):
    def __init__(self, message, first_uncovered=None):
        super().__init__(message)
        self.first_uncovered = first_uncovered


class MuConstraintError(MaglabError, ValueError):
    pass


class SingularEvalError(MaglabError, ValueError):
    pass


class NotSubharmonicError(MaglabError, ValueError):
    def __init__(self, message, min_laplacian=None, where=None):
        super().__init__(message)
        self.min_laplacian = min_laplacian
        self.where = where


class EmptyGridError(MaglabError, ValueError):
    pass


class GridSingularityError(MaglabError, ValueError):
    pass


class DimensionMismatchError(MaglabError, ValueError):
    pass


class InvalidRangeError(MaglabError, ValueError):
    pass


class ZeroVectorError(MaglabError, ValueError):
    pass


class TooLargeError(MaglabError, ValueError):
    pass


class EigenBreakdownError(MaglabError, RuntimeError):
    def __init__(self, message, iterations=0):
        super().__init__(message)
        self.iterations = iterations


class FieldSingularOnCircleError(MaglabError, ValueError):
    pass


class PigeonholeNotFoundError(MaglabError, RuntimeError):
    pass


class GuaranteeViolatedError(MaglabError, RuntimeError):
    pass


class RegionTooSmallError(MaglabError, ValueError):
    pass


class BandLimitError(MaglabError, ValueError):
    def __init__(self, message, outside_energy=None):
        super().__init__(message)
        self.outside_energy = outside_energy


class ConfigError(MaglabError, ValueError):
    pass


class ReportIOError(MaglabError, OSError):
    pass
