"""Exception types shared across the package."""


class XgbVarError(Exception):
    """Base class for package errors."""


class ParseError(XgbVarError, ValueError):
    """Malformed model dump, dataset or config."""


class InfeasibleError(XgbVarError):
    """A linear system or program has no feasible point."""


class BudgetError(XgbVarError):
    """A problem would exceed the configured size budget."""

    def __init__(self, message: str, size: int | None = None):
        super().__init__(message)
        self.size = size


class ConvergenceError(XgbVarError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NumericalError(XgbVarError):
    """Numerical breakdown inside a solver."""
