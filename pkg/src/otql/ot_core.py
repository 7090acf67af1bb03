"""Discrete optimal transport over a shared state index space.

Two solvers are available behind one entry point, :func:`solve_ot`:

* ``Exact``: the transportation LP solved by network simplex (POT's ``emd``).
* ``Sinkhorn``: entropic regularization, iterated in the log domain and
  rounded back onto the true marginals so the returned plan is always
  feasible.

Every value type here is immutable once built; arrays are flagged read-only.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp

from otql.errors import ConvergenceError, SolverError, ValidationError

# POT probes every array backend on import; only numpy is used here.
for _backend in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")

import ot  # noqa: E402

NORMALIZATION_TOL = 1e-6
EXACT_MARGINAL_TOL = 1e-7
SINKHORN_MASS_FLOOR = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ProbabilityVector:
    """Nonnegative mass over ``n`` states summing to one.

    Inputs whose total deviates from 1 by at most ``1e-6`` are rescaled to an
    exact unit total; anything further off is rejected.
    """

    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.ndim != 1 or mass.size == 0:
            raise ValidationError(f"probability vector must be 1-D and non-empty, got shape {mass.shape}")
        if not np.all(np.isfinite(mass)):
            raise ValidationError("probability vector contains non-finite entries")
        if np.any(mass < 0):
            raise ValidationError(f"probability vector has negative mass (min={mass.min():.3e})")
        total = mass.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValidationError(f"probability vector sums to {total:.9g}, expected 1")
        object.__setattr__(self, "mass", _frozen(mass / total))

    @property
    def n(self) -> int:
        return self.mass.size

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityVector":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class CostMatrix:
    """Square ground-cost matrix: nonnegative, zero diagonal, symmetric."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.size == 0:
            raise ValidationError(f"cost matrix must be square and non-empty, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValidationError("cost matrix contains non-finite entries")
        if np.any(entries < 0):
            raise ValidationError("cost matrix has negative entries")
        if np.any(np.diag(entries) != 0):
            raise ValidationError("cost matrix must have a zero diagonal")
        if not np.allclose(entries, entries.T, rtol=0, atol=1e-12):
            raise ValidationError("cost matrix must be symmetric")
        object.__setattr__(self, "entries", _frozen(entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between ``source`` and ``target``.

    Construction only checks shapes; use :func:`verify_plan` to check
    feasibility. Plans returned by :func:`solve_ot` are always feasible.
    """

    flow: np.ndarray
    source: ProbabilityVector
    target: ProbabilityVector

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        n = self.source.n
        if self.target.n != n or flow.shape != (n, n):
            raise ValidationError(
                f"plan shape {flow.shape} does not match marginals ({n}, {self.target.n})"
            )
        object.__setattr__(self, "flow", _frozen(flow))

    @property
    def n(self) -> int:
        return self.source.n

    def objective(self, cost: CostMatrix) -> float:
        """Total transport cost: sum of flow times cost over all pairs."""
        _check_cost_dim(cost, self.n)
        return float(np.sum(self.flow * cost.entries))


class OtMethod(str, enum.Enum):
    EXACT = "exact"
    SINKHORN = "sinkhorn"


@dataclass(frozen=True)
class OtSolverConfig:
    method: OtMethod = OtMethod.EXACT
    sinkhorn_reg: float = 1e-2
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 10_000
    exact_max_iter: int = 1_000_000

    def __post_init__(self):
        object.__setattr__(self, "method", OtMethod(self.method))
        if not self.sinkhorn_reg > 0:
            raise ValidationError(f"sinkhorn_reg must be positive, got {self.sinkhorn_reg}")
        if not self.sinkhorn_tol > 0:
            raise ValidationError(f"sinkhorn_tol must be positive, got {self.sinkhorn_tol}")
        if self.sinkhorn_max_iter < 1 or self.exact_max_iter < 1:
            raise ValidationError("iteration caps must be at least 1")

    @classmethod
    def from_dict(cls, data: dict | None) -> "OtSolverConfig":
        data = dict(data or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown ot config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "sinkhorn_reg": self.sinkhorn_reg,
            "sinkhorn_tol": self.sinkhorn_tol,
            "sinkhorn_max_iter": self.sinkhorn_max_iter,
            "exact_max_iter": self.exact_max_iter,
        }


VectorLike = Union[ProbabilityVector, Sequence[float], np.ndarray]
CostLike = Union[CostMatrix, np.ndarray]


def _as_vector(v: VectorLike) -> ProbabilityVector:
    return v if isinstance(v, ProbabilityVector) else ProbabilityVector(v)


def _as_cost(c: CostLike) -> CostMatrix:
    return c if isinstance(c, CostMatrix) else CostMatrix(c)


def _check_cost_dim(cost: CostMatrix, n: int) -> None:
    if cost.n != n:
        raise ValidationError(f"cost matrix is {cost.n}x{cost.n} but distributions have {n} states")


def build_cost_matrix(coords: Sequence[Sequence[int]]) -> CostMatrix:
    """Squared Euclidean distances between integer grid coordinates."""
    if len(coords) == 0:
        raise ValidationError("cannot build a cost matrix for an empty state space")
    xy = np.asarray(coords)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise ValidationError(f"coordinates must be (x, y) pairs, got shape {xy.shape}")
    if not np.issubdtype(xy.dtype, np.integer):
        if not np.all(np.equal(np.mod(xy, 1), 0)):
            raise ValidationError("coordinates must be integers")
        xy = xy.astype(np.int64)
    diff = xy[:, None, :] - xy[None, :, :]
    return CostMatrix((diff**2).sum(axis=-1).astype(np.float64))


def solve_ot(
    source: VectorLike,
    target: VectorLike,
    cost: CostLike,
    config: OtSolverConfig | None = None,
) -> TransportPlan:
    """Minimum-cost coupling of ``source`` and ``target`` under ``cost``.

    Zero-mass states are kept, so ``flow[i, j]`` always refers to state
    indices ``i`` and ``j``. Among several optimal plans any vertex may be
    returned.

    Raises:
        ValidationError: on dimension mismatch or unnormalized inputs.
        ConvergenceError: when Sinkhorn exhausts ``sinkhorn_max_iter``.
        SolverError: when the exact solver does not report optimality.
    """
    config = config or OtSolverConfig()
    source, target, cost = _as_vector(source), _as_vector(target), _as_cost(cost)
    if source.n != target.n:
        raise ValidationError(f"source has {source.n} states but target has {target.n}")
    _check_cost_dim(cost, source.n)

    if config.method is OtMethod.EXACT:
        flow = _solve_exact(source.mass, target.mass, cost.entries, config.exact_max_iter)
    else:
        flow = _solve_sinkhorn(source.mass, target.mass, cost.entries, config)
    return TransportPlan(flow, source, target)


def _solve_exact(a: np.ndarray, b: np.ndarray, cost: np.ndarray, max_iter: int) -> np.ndarray:
    flow, log = ot.emd(
        np.ascontiguousarray(a),
        np.ascontiguousarray(b),
        np.ascontiguousarray(cost),
        numItermax=max_iter,
        log=True,
    )
    if log["result_code"] != 1:
        raise SolverError(f"network simplex did not reach optimality: {log['warning']}")
    flow = np.asarray(flow, dtype=np.float64)
    # emd can leave -0.0 or sub-ulp negatives on degenerate pivots.
    np.maximum(flow, 0.0, out=flow)
    return flow


def _solve_sinkhorn(a: np.ndarray, b: np.ndarray, cost: np.ndarray, config: OtSolverConfig) -> np.ndarray:
    reg = config.sinkhorn_reg
    a_safe = np.maximum(a, SINKHORN_MASS_FLOOR)
    a_safe /= a_safe.sum()
    b_safe = np.maximum(b, SINKHORN_MASS_FLOOR)
    b_safe /= b_safe.sum()
    log_a, log_b = np.log(a_safe), np.log(b_safe)
    scaled = -cost / reg

    f = np.zeros_like(a_safe)
    g = np.zeros_like(b_safe)
    violation = np.inf
    for it in range(1, config.sinkhorn_max_iter + 1):
        f = log_a - logsumexp(scaled + g[None, :], axis=1)
        g = log_b - logsumexp(scaled + f[:, None], axis=0)
        # after the g-update columns match exactly; rows carry the error
        row = np.exp(f + logsumexp(scaled + g[None, :], axis=1))
        violation = float(np.abs(row - a_safe).sum())
        if violation <= config.sinkhorn_tol:
            break
    else:
        raise ConvergenceError("Sinkhorn did not converge", violation, config.sinkhorn_max_iter)

    plan = np.exp(scaled + f[:, None] + g[None, :])
    return _round_to_marginals(plan, a, b)


def _round_to_marginals(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a near-feasible plan onto the exact marginals ``a`` and ``b``."""
    row = plan.sum(axis=1)
    scale = np.divide(a, row, out=np.zeros_like(a), where=row > 0)
    plan = plan * np.minimum(scale, 1.0)[:, None]
    col = plan.sum(axis=0)
    scale = np.divide(b, col, out=np.zeros_like(b), where=col > 0)
    plan = plan * np.minimum(scale, 1.0)[None, :]
    err_a = a - plan.sum(axis=1)
    err_b = b - plan.sum(axis=0)
    deficit = err_a.sum()
    if deficit > 0:
        plan = plan + np.outer(err_a, err_b) / deficit
    return np.maximum(plan, 0.0)


def wasserstein_distance(plan: TransportPlan, cost: CostLike, p: float = 1.0) -> float:
    """``p``-th root of the plan's transport cost."""
    if not p >= 1:
        raise ValidationError(f"Wasserstein order p must be >= 1, got {p}")
    cost = _as_cost(cost)
    total = max(plan.objective(cost), 0.0)
    return float(total ** (1.0 / p))


def verify_plan(plan: TransportPlan, tol: float = EXACT_MARGINAL_TOL) -> bool:
    flow = plan.flow
    if np.any(flow < -tol):
        return False
    if np.max(np.abs(flow.sum(axis=1) - plan.source.mass)) > tol:
        return False
    return bool(np.max(np.abs(flow.sum(axis=0) - plan.target.mass)) <= tol)


def marginal_residuals(plan: TransportPlan) -> tuple[float, float]:
    """Largest absolute row and column marginal errors."""
    row = float(np.max(np.abs(plan.flow.sum(axis=1) - plan.source.mass)))
    col = float(np.max(np.abs(plan.flow.sum(axis=0) - plan.target.mass)))
    return row, col
