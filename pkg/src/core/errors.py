# /src/core/errors.py

from typing import Any, Dict, Optional


class EitCoolError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context: Dict[str, Any] = dict(context or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.context:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{base} ({details})"


class ConfigError(EitCoolError):
    """Scenario file or CLI configuration is invalid."""

    exit_code = 2


class PhysicsError(EitCoolError):
    """A computation could not produce a meaningful physical result."""

    exit_code = 3


class InvalidParameterError(PhysicsError, ValueError):
    pass


class PoleError(PhysicsError, ArithmeticError):
    """A spectrum was evaluated on (or within tolerance of) a real pole."""


class SingularSolveError(PhysicsError):
    pass


class ConvergenceError(PhysicsError):
    pass


class PositivityError(PhysicsError):
    pass


class FitError(PhysicsError):
    pass


class UndefinedRateError(PhysicsError):
    pass


class TruncationError(PhysicsError):
    pass
