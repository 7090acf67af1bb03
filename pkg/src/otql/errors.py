"""Exception hierarchy shared by every otql module."""

from __future__ import annotations


class OtqlError(Exception):
    """Base class for all errors raised by otql."""


class ValidationError(OtqlError, ValueError):
    """Input failed a structural or numerical precondition."""


class SolverError(OtqlError, RuntimeError):
    """A numerical routine failed to produce a usable result."""


class ConvergenceError(SolverError):
    """An iterative routine hit its iteration cap.

    ``residual`` holds the last measured violation so callers can decide
    whether the partial answer is good enough.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = float(residual)
        self.iterations = int(iterations)
