"""Exception hierarchy shared across the toolkit."""


class FinepotError(Exception):
    """Base class for all toolkit errors."""


class PreconditionError(FinepotError, ValueError):
    """An operation was called with inputs violating its contract."""


class InadmissibleWeightError(PreconditionError):
    """Power-weight exponent outside the admissibility window."""


class DegenerateBoundsError(PreconditionError):
    """Box bounds are empty, inverted, or inconsistent with the resolution."""


class InfeasibleError(PreconditionError):
    """The admissible class of an obstacle problem is empty."""


class ConvergenceError(FinepotError, RuntimeError):
    """A solver exhausted its iteration budget.

    Carries the last iterate and diagnostics so callers can inspect
    near-converged states.
    """

    def __init__(self, message, *, values=None, kkt_residual=None, iterations=None):
        super().__init__(message)
        self.values = values
        self.kkt_residual = kkt_residual
        self.iterations = iterations


class ConfigError(FinepotError, ValueError):
    """A scenario config failed to parse or validate."""
