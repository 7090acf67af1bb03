"""Expert safety-preference distribution over Gridworld states.

Each free cell starts at ``base_safety`` and loses ``adjacency_penalty`` for
every 4-neighbour that is off the grid or an obstacle, clamped below at
``floor``. The goal is pinned to ``goal_safety`` and obstacles get 0. The
values are then normalized into a probability vector.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Mapping

import numpy as np

from otql.errors import ValidationError
from otql.gridworld import DISPLACEMENT, GridworldEnv
from otql.ot_core import ProbabilityVector


@dataclass(frozen=True)
class RiskSpec:
    base_safety: float = 1.0
    adjacency_penalty: float = 0.3
    goal_safety: float = 1.0
    floor: float = 0.05

    def __post_init__(self):
        if not self.base_safety > 0:
            raise ValidationError(f"base_safety must be positive, got {self.base_safety}")
        if not self.adjacency_penalty >= 0:
            raise ValidationError(f"adjacency_penalty must be nonnegative, got {self.adjacency_penalty}")
        if not self.floor > 0:
            raise ValidationError(f"floor must be positive, got {self.floor}")
        if not self.goal_safety > 0:
            raise ValidationError(f"goal_safety must be positive, got {self.goal_safety}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "RiskSpec":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown risk config keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def hazard_adjacencies(env: GridworldEnv, state: int) -> int:
    """Count of 4-neighbours that are off-grid or obstacles."""
    x, y = env.coord(state)
    count = 0
    for dx, dy in DISPLACEMENT:
        c = (x + dx, y + dy)
        if not env.in_grid(c) or c in env.obstacles:
            count += 1
    return count


def raw_safety(env: GridworldEnv, spec: RiskSpec, state: int) -> float:
    if not 0 <= state < env.n_states:
        raise ValidationError(f"state {state} out of range [0, {env.n_states})")
    if state == env.goal_index:
        return spec.goal_safety
    if env.is_obstacle(state):
        return 0.0
    value = spec.base_safety - spec.adjacency_penalty * hazard_adjacencies(env, state)
    return max(value, spec.floor)


def build_risk_distribution(env: GridworldEnv, spec: RiskSpec | None = None) -> ProbabilityVector:
    spec = spec or RiskSpec()
    raw = np.array([raw_safety(env, spec, s) for s in range(env.n_states)])
    total = raw.sum()
    if not total > 0:
        raise ValidationError("every state has zero safety; cannot normalize")
    return ProbabilityVector(raw / total)
