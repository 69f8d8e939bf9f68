"""Exception types shared across the package, with CLI exit-code mapping."""

from __future__ import annotations

__all__ = [
    "ArgumentError",
    "ModelEvaluationError",
    "PositiveDefinitenessError",
    "CapabilityError",
    "ConvergenceError",
    "InsufficientSamplingError",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "EXIT_CONVERGENCE",
    "EXIT_CAPABILITY",
    "exit_code_for",
]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_CAPABILITY = 4


class ArgumentError(ValueError):
    """Invalid argument or configuration value."""


class ModelEvaluationError(ValueError):
    """A model coefficient produced a non-finite value."""


class PositiveDefinitenessError(ValueError):
    """A matrix required to be positive definite is not (within eps_pd)."""


class CapabilityError(NotImplementedError):
    """The requested combination is outside the supported surface."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge.

    Attributes:
        best_value: the best objective value reached before giving up.
        diagnostics: solver state at termination (iterations, gradient norm).
    """

    def __init__(self, message: str, best_value: float | None = None,
                 diagnostics: dict | None = None):
        super().__init__(message)
        self.best_value = best_value
        self.diagnostics = diagnostics or {}


class InsufficientSamplingError(RuntimeError):
    """No trial produced the rare event at any sample size."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI's distinct exit codes."""
    if isinstance(exc, (ArgumentError, ModelEvaluationError,
                        PositiveDefinitenessError)):
        return EXIT_VALIDATION
    if isinstance(exc, (ConvergenceError, InsufficientSamplingError)):
        return EXIT_CONVERGENCE
    if isinstance(exc, CapabilityError):
        return EXIT_CAPABILITY
    return 1
