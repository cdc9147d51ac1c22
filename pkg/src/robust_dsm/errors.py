"""Exception hierarchy shared by every solver stage."""


class DsmError(Exception):
    """Base class for all errors raised by :mod:`robust_dsm`."""


class EmptyUserSet(DsmError, ValueError):
    pass


class DimensionMismatch(DsmError, ValueError):
    pass


class NonPositiveAggregateLoad(DsmError):
    """The aggregate load of some slot is not strictly positive."""

    def __init__(self, slot, value):
        self.slot = slot
        self.value = value
        super().__init__(f"aggregate load at slot {slot} is {value!r} (must be > 0)")


class InfeasibleUserModel(DsmError):
    """A user's device constraints admit no schedule."""


class MaxIterationsExceeded(DsmError):
    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class DegenerateDirection(DsmError, ArithmeticError):
    """``a_h + A delta`` vanished, so the normalized update is undefined."""


class MaxOuterIterations(DsmError):
    """The outer loop ran out of iterations. ``result`` holds the last iterate."""

    def __init__(self, result):
        self.result = result
        super().__init__(
            f"no equilibrium after {result.outer_iterations} outer iterations "
            f"(last relative change {result.trace[-1].relative_change:.3e})"
        )


class ConfigurationError(DsmError, ValueError):
    pass
