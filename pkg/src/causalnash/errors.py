"""Exception types raised across the package."""


class InputError(ValueError):
    """Malformed input: wrong shapes, out-of-range symbols, invalid probabilities."""


class PreconditionError(ValueError):
    """An operation was called on inputs violating its documented precondition."""


class DomainError(ValueError):
    """A functional was evaluated outside its domain (e.g. nu not << m)."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``gap`` carries the last measured error (marginal gap, gradient norm or
    stationarity gap depending on the solver) and ``partial`` may hold the
    last iterate so callers can still inspect or serialize it.
    """

    def __init__(self, message, gap=float("nan"), partial=None):
        super().__init__(message)
        self.gap = gap
        self.partial = partial
