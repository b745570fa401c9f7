"""Exception hierarchy."""


class TFisherError(Exception):
    """Base class for all errors raised by the package."""


class DomainError(TFisherError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(TFisherError, ArithmeticError):
    """An iterative method stopped before reaching its tolerance.

    The best available estimate is kept on ``best_estimate``.
    """

    def __init__(self, message, best_estimate=None, error_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.error_estimate = error_estimate


class BracketError(TFisherError, ValueError):
    """A root bracket does not contain a sign change."""


class InfeasibleLevelError(TFisherError, ValueError):
    """The requested level cannot be attained without a randomized test."""


class ModelError(TFisherError, ArithmeticError):
    """A covariance or distribution model is numerically invalid."""


class FitError(TFisherError, ArithmeticError):
    """A regression fit failed (separation, rank deficiency, no convergence)."""


class ParseError(TFisherError, ValueError):
    """An input file is malformed; ``line`` holds the 1-based line number."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
