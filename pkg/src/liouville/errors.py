"""Exception types raised by the liouville engines."""


class LiouvilleError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(LiouvilleError, ValueError):
    pass


class NonSquareError(LiouvilleError, ValueError):
    pass


class AsymmetricBeyondToleranceError(LiouvilleError, ValueError):
    def __init__(self, i, j, gap, allowed):
        self.pair = (i, j)
        self.gap = gap
        self.allowed = allowed
        super().__init__(
            f"entries ({i},{j}) and ({j},{i}) differ by {gap:.3e} > allowed {allowed:.3e}"
        )


class SingularMatrixError(LiouvilleError, ArithmeticError):
    pass


class HypothesesNotSatisfied(LiouvilleError):
    pass


class EmptySubsetError(LiouvilleError, ValueError):
    pass


class NonpositiveRhoError(LiouvilleError, ValueError):
    pass


class ZeroMassError(LiouvilleError, ValueError):
    pass


class StepUnderflowError(LiouvilleError, ArithmeticError):
    pass


class OverflowInExponentialError(LiouvilleError, OverflowError):
    def __init__(self, height, max_safe):
        self.height = height
        self.max_safe = max_safe
        super().__init__(
            f"initial height {height:.6g} exceeds the max safe height {max_safe:g}"
        )


class NoConvergenceError(LiouvilleError, ArithmeticError):
    pass


class NonzeroMeanError(LiouvilleError, ValueError):
    pass


class QuadratureUnderflowError(LiouvilleError, ArithmeticError):
    pass


class MaxIterExceeded(LiouvilleError):
    """Raised when the Picard solve runs out of iterations.

    The best iterate seen is attached as ``solution`` so callers can inspect
    the residual history instead of losing the work.
    """

    def __init__(self, message, solution):
        super().__init__(message)
        self.solution = solution
