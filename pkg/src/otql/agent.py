"""Tabular Q-learning with an optional optimal-transport shaping bonus.

The OT-assisted update adds ``beta * bonus[s, s']`` inside the TD bracket,
where ``bonus = flow * cost`` comes from the transport plan between the
policy's state distribution and the risk distribution. A bonus entry is
consumed (set to zero) the first time its pair is used, and the whole table
is rebuilt after every episode.

The random stream is touched only by :func:`select_action`, so a run with
``beta = 0`` reproduces the baseline run with the same seed exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np

from otql.errors import ValidationError
from otql.gridworld import N_ACTIONS, Action, GridworldEnv
from otql.ot_core import (
    CostMatrix,
    OtSolverConfig,
    ProbabilityVector,
    TransportPlan,
    solve_ot,
    wasserstein_distance,
)
from otql.policy_analysis import (
    StationaryConfig,
    StationaryMethod,
    VisitCounter,
    empirical_distribution,
    induced_chain,
    power_iteration,
)


class AgentMode(str, enum.Enum):
    BASELINE = "baseline"
    OT_ASSISTED = "ot"


@dataclass
class QTable:
    values: np.ndarray
    alpha: float = 0.1
    gamma: float = 0.95

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != N_ACTIONS:
            raise ValidationError(f"Q-table must have shape (n_states, {N_ACTIONS}), got {self.values.shape}")
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.gamma < 1:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")

    @classmethod
    def zeros(cls, n_states: int, alpha: float = 0.1, gamma: float = 0.95) -> "QTable":
        return cls(np.zeros((n_states, N_ACTIONS)), alpha, gamma)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EpsilonSchedule:
    initial: float = 1.0
    decay: float = 0.995
    minimum: float = 0.01

    def __post_init__(self):
        if not 0 <= self.initial <= 1:
            raise ValidationError(f"epsilon initial must lie in [0, 1], got {self.initial}")
        if not 0 < self.decay <= 1:
            raise ValidationError(f"epsilon decay must lie in (0, 1], got {self.decay}")
        if not 0 <= self.minimum <= self.initial:
            raise ValidationError(f"epsilon minimum must lie in [0, initial], got {self.minimum}")

    def value(self, episode: int) -> float:
        """Exploration rate for the 0-based ``episode``."""
        return max(self.minimum, self.initial * self.decay**episode)


class ShapingTable:
    """Per-transition bonus ``flow[s, s'] * cost[s, s']``, consumed on use."""

    def __init__(self, bonus: np.ndarray):
        bonus = np.array(bonus, dtype=np.float64)
        if bonus.ndim != 2 or bonus.shape[0] != bonus.shape[1]:
            raise ValidationError(f"shaping table must be square, got shape {bonus.shape}")
        if np.any(bonus < 0):
            raise ValidationError("shaping bonuses must be nonnegative")
        self.bonus = bonus

    @classmethod
    def zeros(cls, n_states: int) -> "ShapingTable":
        return cls(np.zeros((n_states, n_states)))

    @classmethod
    def from_plan(cls, plan: TransportPlan, cost: CostMatrix) -> "ShapingTable":
        return cls(plan.flow * cost.entries)

    def take(self, s: int, s_next: int) -> float:
        value = self.bonus[s, s_next]
        self.bonus[s, s_next] = 0.0
        return float(value)


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 0.1
    gamma: float = 0.95
    beta: float = 1.0
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    mode: AgentMode = AgentMode.OT_ASSISTED
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", AgentMode(self.mode))
        if not self.beta >= 0:
            raise ValidationError(f"beta must be nonnegative, got {self.beta}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be an unsigned integer, got {self.seed!r}")
        # validated eagerly so config errors surface before training starts
        QTable.zeros(1, self.alpha, self.gamma)

    @property
    def effective_beta(self) -> float:
        return self.beta if self.mode is AgentMode.OT_ASSISTED else 0.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None, **overrides: Any) -> "AgentConfig":
        data = dict(data or {})
        unknown = set(data) - {"alpha", "gamma", "beta", "epsilon", "mode", "seed"}
        if unknown:
            raise ValidationError(f"unknown agent config keys: {sorted(unknown)}")
        eps = dict(data.pop("epsilon", None) or {})
        unknown = set(eps) - {"initial", "decay", "min"}
        if unknown:
            raise ValidationError(f"unknown epsilon keys: {sorted(unknown)}")
        if "min" in eps:
            eps["minimum"] = eps.pop("min")
        data.update(overrides)
        return cls(epsilon=EpsilonSchedule(**eps), **data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "beta": self.beta,
            "epsilon": {
                "initial": self.epsilon.initial,
                "decay": self.epsilon.decay,
                "min": self.epsilon.minimum,
            },
            "mode": self.mode.value,
        }


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    seed: int
    mode: AgentMode
    return_undiscounted: float
    return_discounted: float
    length: int
    collisions: int
    epsilon: float
    wasserstein: float = float("nan")


def select_action(qtable: QTable, state: int, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy choice; greedy ties resolve to the lowest action index.

    Exactly one uniform draw is taken per call, plus one integer draw when
    exploring.
    """
    if rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(qtable.values[state])))


def q_update(
    qtable: QTable,
    s: int,
    a: int,
    r: float,
    s_next: int,
    terminal: bool,
    beta: float,
    shaping: ShapingTable,
) -> float:
    """Apply one TD update in place and return the shaping bonus consumed."""
    values = qtable.values
    target_max = 0.0 if terminal else values[s_next].max()
    bonus = shaping.take(s, s_next)
    values[s, a] += qtable.alpha * (r + qtable.gamma * target_max - values[s, a] + beta * bonus)
    return bonus


UpdateHook = Callable[[int, int, int, int, float], None]
"""Called as ``hook(episode, s, a, s_next, bonus)`` after every update."""


def run_episode(
    env: GridworldEnv,
    qtable: QTable,
    config: AgentConfig,
    shaping: ShapingTable,
    rng: np.random.Generator,
    epsilon: float,
    episode: int = 0,
    on_update: UpdateHook | None = None,
) -> tuple[EpisodeRecord, VisitCounter]:
    """Play one episode from the start state, updating ``qtable`` in place.

    The returned record has ``wasserstein`` unset (NaN); :func:`train` fills
    it in once the post-episode distribution is known.
    """
    beta = config.effective_beta
    gamma = qtable.gamma
    next_state, reward, collided, terminal = env.next_state, env.reward, env.collided, env.terminal

    counter = VisitCounter.for_env(env)
    counts = counter.counts
    s = env.start_index
    counts[s] += 1
    ret = disc_ret = 0.0
    discount = 1.0
    length = collisions = 0
    while length < env.max_steps:
        a = int(select_action(qtable, s, epsilon, rng))
        s_next = int(next_state[s, a])
        r = float(reward[s, a])
        done = bool(terminal[s, a])
        bonus = q_update(qtable, s, a, r, s_next, done, beta, shaping)
        if on_update is not None:
            on_update(episode, s, a, s_next, bonus)
        ret += r
        disc_ret += discount * r
        discount *= gamma
        length += 1
        collisions += int(collided[s, a])
        counts[s_next] += 1
        s = s_next
        if done:
            break

    record = EpisodeRecord(
        episode=episode,
        seed=config.seed,
        mode=config.mode,
        return_undiscounted=ret,
        return_discounted=disc_ret,
        length=length,
        collisions=collisions,
        epsilon=epsilon,
    )
    return record, counter


def estimate_policy_distribution(
    env: GridworldEnv,
    qtable: QTable,
    counter: VisitCounter,
    stationary: StationaryConfig,
) -> ProbabilityVector:
    if stationary.method is StationaryMethod.EMPIRICAL:
        return empirical_distribution(counter, stationary.smoothing)
    chain = induced_chain(env, qtable)
    return power_iteration(chain, stationary.tol, stationary.max_iter, stationary.damping).distribution


@dataclass
class TrainingResult:
    records: list[EpisodeRecord]
    qtable: QTable


def train(
    env: GridworldEnv,
    risk: ProbabilityVector,
    cost: CostMatrix,
    config: AgentConfig,
    ot_config: OtSolverConfig | None = None,
    episodes: int = 500,
    stationary: StationaryConfig | None = None,
    wasserstein_p: float = 1.0,
    log_wasserstein: bool = True,
    on_update: UpdateHook | None = None,
) -> TrainingResult:
    """Run the full training loop.

    Episode 0 runs with an all-zero shaping table. After every episode the
    policy distribution is estimated, the plan towards ``risk`` is solved,
    and (in OT-assisted mode) the shaping table is rebuilt from it. In
    baseline mode the plan is only used to log the Wasserstein distance, and
    not even that when ``log_wasserstein`` is false.
    """
    if episodes < 1:
        raise ValidationError(f"episodes must be at least 1, got {episodes}")
    if risk.n != env.n_states or cost.n != env.n_states:
        raise ValidationError("risk distribution and cost matrix must cover every grid cell")
    ot_config = ot_config or OtSolverConfig()
    stationary = stationary or StationaryConfig()
    use_ot = config.mode is AgentMode.OT_ASSISTED

    rng = np.random.default_rng(config.seed)
    qtable = QTable.zeros(env.n_states, config.alpha, config.gamma)
    shaping = ShapingTable.zeros(env.n_states)
    records: list[EpisodeRecord] = []
    for ep in range(episodes):
        eps = config.epsilon.value(ep)
        record, counter = run_episode(env, qtable, config, shaping, rng, eps, ep, on_update)
        if use_ot or log_wasserstein:
            p_pi = estimate_policy_distribution(env, qtable, counter, stationary)
            plan = solve_ot(p_pi, risk, cost, ot_config)
            record = replace(record, wasserstein=wasserstein_distance(plan, cost, wasserstein_p))
            if use_ot:
                shaping = ShapingTable.from_plan(plan, cost)
        records.append(record)
    return TrainingResult(records, qtable)
