"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """An input violates a documented precondition."""


class InvalidModelError(ValueError):
    """Model parameters outside the supported range."""


class ResourceLimitError(RuntimeError):
    """A dense representation would exceed the configured size cap."""


class UnsupportedFeatureError(NotImplementedError):
    """The requested combination is outside the implemented scope."""


class DegenerateOverlapError(ArithmeticError):
    """An overlap needed as a denominator vanished."""


class ChainTooSmallError(ValueError):
    """The ancilla chain needs at least two qubits."""


class InvariantViolation(AssertionError):
    """A checked mathematical invariant failed."""


class SignProblemWarning(RuntimeWarning):
    """Ensemble-averaged overlap is small compared with its spread."""
