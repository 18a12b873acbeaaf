"""
Exception hierarchy for wflab.

The CLI maps ConfigError to exit code 2 and every other WFLabError to exit code 3.
"""
from typing import Any, Optional


class WFLabError(Exception):
    """Base class for all library errors"""


class InvalidStateError(WFLabError, ValueError):
    """A value violates the invariants of its type"""


class DimensionMismatchError(WFLabError, ValueError):
    """Operands live on simplices of different dimension"""

    def __init__(self, expected: int, got: int, what: str = "operand"):
        super().__init__(f"Dimension mismatch for {what}: expected n={expected}, got n={got}")
        self.expected = expected
        self.got = got


class UnsupportedDimensionError(WFLabError, ValueError):
    """An exact oracle was asked for a dimension it does not cover"""


class NumericalError(WFLabError, RuntimeError):
    """A computation produced a non-finite or otherwise unusable value"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ConvergenceError(WFLabError, RuntimeError):
    """An optimizer exhausted its budget; carries the best iterate found"""

    def __init__(self, message: str, best: Any = None, value: Optional[float] = None,
                 gradient_norm: Optional[float] = None):
        super().__init__(message)
        self.best = best
        self.value = value
        self.gradient_norm = gradient_norm


class ConfigError(WFLabError, ValueError):
    """An experiment configuration failed validation"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class OutputError(WFLabError, RuntimeError):
    """A result row, path artifact or summary could not be written"""
