"""Exception hierarchy shared by every module."""


class MarkovTestError(Exception):
    """Base class for all errors raised by markovsprt."""


class ChainValidationError(MarkovTestError, ValueError):
    pass


class NotSquareError(ChainValidationError):
    pass


class NegativeEntryError(ChainValidationError):
    pass


class RowSumOutOfToleranceError(ChainValidationError):
    pass


class DimensionMismatchError(MarkovTestError, ValueError):
    pass


class NoConvergenceError(MarkovTestError, ArithmeticError):
    pass


class RejectionBudgetExceededError(MarkovTestError, RuntimeError):
    pass


class InvalidStateError(MarkovTestError, ValueError):
    pass


class EmptyHistoryError(MarkovTestError, ValueError):
    pass


class ImpossibleUnderBothError(MarkovTestError, ValueError):
    """The observed transition has zero probability under both chains."""


class InfiniteRatioError(MarkovTestError, ValueError):
    pass


class SingularSystemError(MarkovTestError, ArithmeticError):
    pass


class LengthMismatchError(MarkovTestError, ValueError):
    pass


class StreamError(MarkovTestError, RuntimeError):
    """Raised when a sample source fails mid-run; carries the partial trace."""

    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.state = state
