"""Risk-sensitive tabular Q-learning with an optimal-transport shaping term."""

from otql.errors import ConvergenceError, OtqlError, SolverError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "OtqlError",
    "SolverError",
    "ValidationError",
    "__version__",
]
