from typing import Any, Optional


class SpdeLabError(Exception):
    """Base class for all library errors"""


class ConfigurationError(SpdeLabError, ValueError):
    """Invalid sizes, parameters, grids or refinement relations"""


class DomainError(SpdeLabError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class ShapeError(SpdeLabError, ValueError):
    """Array length does not match the expected layout"""


class NumericError(SpdeLabError, ArithmeticError):
    """Non-finite values or a numerical procedure that did not converge"""

    def __init__(self, message: str, step: Optional[int] = None, seed: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.seed = seed


class ConvergenceStudyError(SpdeLabError):
    """A study level failed; completed levels are kept on `partial`"""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial
