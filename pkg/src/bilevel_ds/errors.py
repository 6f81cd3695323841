"""Exception hierarchy shared by every module of the package."""


class BilevelError(Exception):
    """Base class for all package errors."""


class BudgetExhausted(BilevelError):
    """Raised when a fresh upper-level evaluation would exceed the budget.

    ``best`` optionally carries the best point accepted so far as a tuple
    ``(x, y, F, alpha)`` so that a caller can finalize its run.
    """

    def __init__(self, message="upper-level evaluation budget exhausted", best=None):
        super().__init__(message)
        self.best = best


class NonFiniteValue(BilevelError, ArithmeticError):
    """An objective, gradient or input came back NaN or infinite."""


class MissingMetadata(BilevelError):
    """A regularity constant needed by an operation is unknown."""


class MissingAnalyticLower(BilevelError):
    """The operation needs the exact lower-level solution map."""


class InvalidConfig(BilevelError, ValueError):
    pass


class EmptyDirectionSet(BilevelError, ValueError):
    pass


class DegenerateDirection(BilevelError):
    pass


class UnsupportedMesh(BilevelError):
    pass


class EmptyInput(BilevelError, ValueError):
    pass


class MetadataViolation(BilevelError, AssertionError):
    """An observed value contradicts a declared problem constant."""
