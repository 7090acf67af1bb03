"""Deterministic Gridworld MDP.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row, row 0 at
the top. States are indexed row-major, ``index = y * width + x``, and the
index space covers every cell including obstacles (which are never entered).

Dynamics:

- moving onto the goal ends the episode with ``reward_goal``;
- moving onto an obstacle leaves the agent in place with ``reward_obstacle``
  and counts as a collision;
- moving off the grid leaves the agent in place with ``reward_step``;
- any other move succeeds with ``reward_step``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from otql.errors import ValidationError

Coord = tuple[int, int]

CANONICAL_LAYOUT = "canonical_15x15.json"


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


ACTIONS = tuple(Action)
N_ACTIONS = len(ACTIONS)

# (dx, dy) per action, indexed by Action value
DISPLACEMENT = ((0, -1), (0, 1), (-1, 0), (1, 0))


@dataclass(frozen=True)
class StepOutcome:
    next_state: int
    reward: float
    terminal: bool
    collided: bool


@dataclass(frozen=True)
class GridworldEnv:
    width: int
    height: int
    obstacles: frozenset[Coord]
    start: Coord
    goal: Coord
    reward_step: float = -1.0
    reward_obstacle: float = -10.0
    reward_goal: float = 10.0
    max_steps: int = 500

    # Dense transition tables, filled in __post_init__. Shape (n_states, 4).
    next_state: np.ndarray = field(init=False, repr=False, compare=False)
    reward: np.ndarray = field(init=False, repr=False, compare=False)
    collided: np.ndarray = field(init=False, repr=False, compare=False)
    terminal: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", frozenset(tuple(c) for c in self.obstacles))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        _validate(self)
        self._build_tables()

    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def start_index(self) -> int:
        return self.index(self.start)

    @property
    def goal_index(self) -> int:
        return self.index(self.goal)

    def index(self, coord: Coord) -> int:
        x, y = coord
        return y * self.width + x

    def coord(self, index: int) -> Coord:
        return index % self.width, index // self.width

    def in_grid(self, coord: Coord) -> bool:
        x, y = coord
        return 0 <= x < self.width and 0 <= y < self.height

    def is_obstacle(self, index: int) -> bool:
        return self.coord(index) in self.obstacles

    @property
    def free_mask(self) -> np.ndarray:
        """Boolean mask of non-obstacle cells, in index order."""
        mask = np.ones(self.n_states, dtype=bool)
        for c in self.obstacles:
            mask[self.index(c)] = False
        return mask

    def _build_tables(self) -> None:
        n = self.n_states
        nxt = np.zeros((n, N_ACTIONS), dtype=np.int64)
        rew = np.zeros((n, N_ACTIONS), dtype=np.float64)
        col = np.zeros((n, N_ACTIONS), dtype=bool)
        term = np.zeros((n, N_ACTIONS), dtype=bool)
        for s in range(n):
            x, y = self.coord(s)
            for a, (dx, dy) in enumerate(DISPLACEMENT):
                target = (x + dx, y + dy)
                if not self.in_grid(target):
                    nxt[s, a], rew[s, a] = s, self.reward_step
                elif target in self.obstacles:
                    nxt[s, a], rew[s, a], col[s, a] = s, self.reward_obstacle, True
                elif target == self.goal:
                    nxt[s, a], rew[s, a], term[s, a] = self.index(target), self.reward_goal, True
                else:
                    nxt[s, a], rew[s, a] = self.index(target), self.reward_step
        for name, table in (("next_state", nxt), ("reward", rew), ("collided", col), ("terminal", term)):
            table.setflags(write=False)
            object.__setattr__(self, name, table)

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": [list(c) for c in sorted(self.obstacles, key=lambda c: (c[1], c[0]))],
            "start": list(self.start),
            "goal": list(self.goal),
            "rewards": {
                "step": self.reward_step,
                "obstacle": self.reward_obstacle,
                "goal": self.reward_goal,
            },
            "max_steps": self.max_steps,
        }

    def render(self) -> str:
        """ASCII picture: ``#`` obstacle, ``S`` start, ``G`` goal, ``.`` free."""
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                c = (x, y)
                row.append("#" if c in self.obstacles else "S" if c == self.start else "G" if c == self.goal else ".")
            rows.append("".join(row))
        return "\n".join(rows)


def _validate(env: GridworldEnv) -> None:
    for name in ("width", "height", "max_steps"):
        value = getattr(env, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
            raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    for name in ("start", "goal"):
        c = getattr(env, name)
        if len(c) != 2 or not env.in_grid(c):
            raise ValidationError(f"{name} {c} lies outside the {env.width}x{env.height} grid")
        if c in env.obstacles:
            raise ValidationError(f"{name} {c} is placed on an obstacle")
    if env.start == env.goal:
        raise ValidationError(f"start and goal coincide at {env.start}")
    for c in env.obstacles:
        if len(c) != 2 or not env.in_grid(c):
            raise ValidationError(f"obstacle {c} lies outside the {env.width}x{env.height} grid")


def step(env: GridworldEnv, state: int, action: Action | int) -> StepOutcome:
    if not 0 <= state < env.n_states:
        raise ValidationError(f"state {state} out of range [0, {env.n_states})")
    if env.is_obstacle(state):
        raise ValidationError(f"state {state} {env.coord(state)} is an obstacle")
    if state == env.goal_index:
        raise ValidationError(f"state {state} is the goal; the episode has ended")
    a = int(Action(action))
    return StepOutcome(
        next_state=int(env.next_state[state, a]),
        reward=float(env.reward[state, a]),
        terminal=bool(env.terminal[state, a]),
        collided=bool(env.collided[state, a]),
    )


def state_coords(env: GridworldEnv) -> list[Coord]:
    return [env.coord(i) for i in range(env.n_states)]


def _coord(value: Any, what: str) -> Coord:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ValidationError(f"{what} must be an [x, y] integer pair, got {value!r}")
    return int(value[0]), int(value[1])


_ENV_KEYS = {"width", "height", "obstacles", "start", "goal", "rewards", "max_steps"}
_REWARD_KEYS = {"step", "obstacle", "goal"}


def load_env(description: Mapping[str, Any]) -> GridworldEnv:
    """Build a validated environment from a JSON-style mapping."""
    if not isinstance(description, Mapping):
        raise ValidationError("environment description must be a JSON object")
    missing = {"width", "height", "obstacles", "start", "goal"} - set(description)
    if missing:
        raise ValidationError(f"environment description is missing keys: {sorted(missing)}")
    unknown = set(description) - _ENV_KEYS
    if unknown:
        raise ValidationError(f"unknown environment keys: {sorted(unknown)}")

    obstacles_raw: Iterable[Any] = description["obstacles"]
    if not isinstance(obstacles_raw, list):
        raise ValidationError("obstacles must be a list of [x, y] pairs")
    obstacles = [_coord(o, "obstacle") for o in obstacles_raw]
    seen: set[Coord] = set()
    for c in obstacles:
        if c in seen:
            raise ValidationError(f"duplicate obstacle entry {list(c)}")
        seen.add(c)

    rewards = description.get("rewards") or {}
    unknown = set(rewards) - _REWARD_KEYS
    if unknown:
        raise ValidationError(f"unknown reward keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key in _REWARD_KEYS & set(rewards):
        value = rewards[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"reward {key!r} must be a number, got {value!r}")
        kwargs[f"reward_{key}"] = float(value)
    if "max_steps" in description:
        kwargs["max_steps"] = description["max_steps"]

    return GridworldEnv(
        width=description["width"],
        height=description["height"],
        obstacles=frozenset(obstacles),
        start=_coord(description["start"], "start"),
        goal=_coord(description["goal"], "goal"),
        **kwargs,
    )


def load_env_file(path: str | Path) -> GridworldEnv:
    with open(path, encoding="utf-8") as fh:
        return load_env(json.load(fh))


def canonical_description() -> dict[str, Any]:
    """The shipped 15x15 layout used by the default experiment."""
    text = resources.files("otql.layouts").joinpath(CANONICAL_LAYOUT).read_text(encoding="utf-8")
    return json.loads(text)


def canonical_env() -> GridworldEnv:
    return load_env(canonical_description())
