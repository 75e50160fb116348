"""Exception hierarchy shared by all modules."""


class TorsionLabError(Exception):
    """Base class for every error raised by the package."""


class UsageError(TorsionLabError, ValueError):
    """Invalid input, configuration or schema (CLI exit code 2)."""


class InvalidRankError(UsageError):
    pass


class MismatchedLeviError(UsageError):
    pass


class NonDominantWeightError(UsageError):
    pass


class UnsupportedOrderError(UsageError):
    pass


class NumericalError(TorsionLabError, ArithmeticError):
    """A numerical procedure failed or produced an untrustworthy result (CLI exit code 1)."""


class SingularSystemError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    pass


class LimitDivergenceError(NumericalError):
    pass


class InconsistentLaurentError(NumericalError):
    pass


class ZetaPoleError(NumericalError):
    """Raised when a zeta function is evaluated exactly at a pole.

    The Laurent data at the pole is attached as ``laurent``.
    """

    def __init__(self, message, laurent):
        super().__init__(message)
        self.laurent = laurent
