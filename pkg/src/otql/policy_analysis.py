"""Estimates of the state distribution a policy induces.

Two routes are provided:

* :func:`empirical_distribution` normalizes visit counts (the default used
  during training, counts taken over the episode that just finished);
* :func:`stationary_distribution` runs damped power iteration on the Markov
  chain of the greedy policy, with the goal redirected to the start so the
  chain is recurrent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from otql.errors import ConvergenceError, ValidationError
from otql.gridworld import GridworldEnv
from otql.ot_core import ProbabilityVector

DEFAULT_DAMPING = 0.05


class Window(str, enum.Enum):
    LAST_EPISODE = "last_episode"
    ALL_EPISODES = "all_episodes"


class StationaryMethod(str, enum.Enum):
    EMPIRICAL = "empirical"
    POWER = "power"


@dataclass
class VisitCounter:
    """State visit tallies.

    ``reachable`` marks cells that may receive smoothing mass; by default
    every cell does.
    """

    counts: np.ndarray
    window: Window = Window.LAST_EPISODE
    reachable: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ValidationError("visit counts must be a 1-D array")
        if np.any(self.counts < 0):
            raise ValidationError("visit counts must be nonnegative")
        if self.reachable is None:
            self.reachable = np.ones(self.counts.size, dtype=bool)
        else:
            self.reachable = np.asarray(self.reachable, dtype=bool)
            if self.reachable.shape != self.counts.shape:
                raise ValidationError("reachable mask must match counts length")
        self.window = Window(self.window)

    @classmethod
    def for_env(cls, env: GridworldEnv, window: Window = Window.LAST_EPISODE) -> "VisitCounter":
        return cls(np.zeros(env.n_states, dtype=np.int64), window, env.free_mask)

    @property
    def n(self) -> int:
        return self.counts.size


@dataclass(frozen=True)
class StationaryConfig:
    method: StationaryMethod = StationaryMethod.EMPIRICAL
    smoothing: float = 1e-6
    damping: float = DEFAULT_DAMPING
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "method", StationaryMethod(self.method))
        if self.smoothing < 0:
            raise ValidationError(f"smoothing must be nonnegative, got {self.smoothing}")
        if not 0 <= self.damping < 1:
            raise ValidationError(f"damping must lie in [0, 1), got {self.damping}")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValidationError("tol must be positive and max_iter at least 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "StationaryConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown stationary config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "smoothing": self.smoothing,
            "damping": self.damping,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }


def empirical_distribution(counter: VisitCounter, smoothing: float = 1e-6) -> ProbabilityVector:
    if smoothing < 0:
        raise ValidationError(f"smoothing must be nonnegative, got {smoothing}")
    weights = counter.counts.astype(np.float64) + smoothing * counter.reachable
    total = weights.sum()
    if not total > 0:
        raise ValidationError("no visits recorded and no smoothing mass to fall back on")
    return ProbabilityVector(weights / total)


@dataclass(frozen=True)
class PolicyMatrix:
    """Row-stochastic transition matrix of the greedy policy's Markov chain."""

    matrix: np.ndarray
    free: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"policy matrix must be square, got shape {m.shape}")
        if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValidationError("policy matrix must be row-stochastic")
        free = np.asarray(self.free, dtype=bool)
        if free.shape != (m.shape[0],) or not free.any():
            raise ValidationError("free mask must match the matrix and mark at least one state")
        m.setflags(write=False)
        free.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "free", free)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def greedy_actions(values: np.ndarray) -> np.ndarray:
    """Argmax per state; ties go to the lowest action index."""
    return np.argmax(values, axis=1)


def _q_values(qtable: Any) -> np.ndarray:
    return np.asarray(getattr(qtable, "values", qtable), dtype=np.float64)


def greedy_successors(env: GridworldEnv, qtable: Any) -> np.ndarray:
    """Next state of every cell under the greedy policy, goal restarting."""
    values = _q_values(qtable)
    if values.shape != (env.n_states, env.next_state.shape[1]):
        raise ValidationError(
            f"Q-table shape {values.shape} does not match environment ({env.n_states}, 4)"
        )
    succ = env.next_state[np.arange(env.n_states), greedy_actions(values)].copy()
    free = env.free_mask
    succ[~free] = np.flatnonzero(~free)
    succ[env.goal_index] = env.start_index
    return succ


def induced_chain(env: GridworldEnv, qtable: Any) -> PolicyMatrix:
    succ = greedy_successors(env, qtable)
    m = np.zeros((env.n_states, env.n_states))
    m[np.arange(env.n_states), succ] = 1.0
    return PolicyMatrix(m, env.free_mask)


@dataclass(frozen=True)
class StationaryResult:
    distribution: ProbabilityVector
    residual: float
    iterations: int
    damping: float


def power_iteration(
    chain: PolicyMatrix,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    damping: float = DEFAULT_DAMPING,
) -> StationaryResult:
    """Damped power iteration from the uniform distribution over free cells.

    Iterates ``v <- (1 - damping) * v @ M + damping * u``. The returned
    ``residual`` is the L1 change produced by one more application of that
    operator, so with ``damping=0`` it is exactly ``|v M - v|_1``.
    """
    if not 0 <= damping < 1:
        raise ValidationError(f"damping must lie in [0, 1), got {damping}")
    u = chain.free / chain.free.sum()
    v = u.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = (1.0 - damping) * (v @ chain.matrix) + damping * u
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - v).sum())
        if residual <= tol:
            return StationaryResult(ProbabilityVector(v), residual, it, damping)
        v = nxt
    raise ConvergenceError("power iteration did not converge", residual, max_iter)


def stationary_distribution(
    chain: PolicyMatrix,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    damping: float = DEFAULT_DAMPING,
) -> ProbabilityVector:
    return power_iteration(chain, tol, max_iter, damping).distribution


def rollout_visits(env: GridworldEnv, qtable: Any, steps: int) -> VisitCounter:
    """Follow the greedy chain for ``steps`` transitions from the start.

    Reaching the goal restarts at the start on the next transition, matching
    :func:`induced_chain`.
    """
    succ = greedy_successors(env, qtable)
    counts = np.zeros(env.n_states, dtype=np.int64)
    s = env.start_index
    counts[s] += 1
    for _ in range(steps):
        s = succ[s]
        counts[s] += 1
    return VisitCounter(counts, Window.ALL_EPISODES, env.free_mask)


def total_variation(p: ProbabilityVector, q: ProbabilityVector) -> float:
    return 0.5 * float(np.abs(p.mass - q.mass).sum())
