"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance.

    ``residual`` carries the last residual and ``tail`` an optional list of
    the final iterates, for diagnostics.
    """

    def __init__(self, message, residual=None, tail=None):
        super().__init__(message)
        self.residual = residual
        self.tail = tail


class NumericError(ArithmeticError):
    """A numerical routine produced an invalid result (NaN, negative variance, ...)."""


class CapacityError(ValueError):
    """A problem is too large for an exact (enumerative) method."""
