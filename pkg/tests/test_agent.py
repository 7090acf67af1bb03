from dataclasses import replace

import numpy as np
import pytest

from otql.agent import (
    AgentConfig,
    AgentMode,
    EpsilonSchedule,
    QTable,
    ShapingTable,
    q_update,
    run_episode,
    select_action,
    train,
)
from otql.errors import ValidationError
from otql.gridworld import Action, GridworldEnv, canonical_env, state_coords
from otql.ot_core import build_cost_matrix
from otql.policy_analysis import StationaryConfig
from otql.risk_model import build_risk_distribution


def corridor(length=3, **kw):
    return GridworldEnv(length, 1, frozenset(), start=(0, 0), goal=(length - 1, 0), **kw)


def problem(env):
    return build_risk_distribution(env), build_cost_matrix(state_coords(env))


@pytest.fixture(scope="module")
def small_env():
    obstacles = frozenset({(2, 1), (2, 2), (4, 3), (1, 4)})
    return GridworldEnv(6, 6, obstacles, start=(0, 0), goal=(5, 5), max_steps=200)


class TestSelectAction:
    def test_greedy(self):
        q = QTable(np.array([[1.0, 2.0, 0.0, 0.0]]))
        assert select_action(q, 0, 0.0, np.random.default_rng(0)) is Action.DOWN

    def test_tie_break(self):
        assert select_action(QTable.zeros(1), 0, 0.0, np.random.default_rng(0)) is Action.UP

    def test_uniform_exploration(self):
        rng = np.random.default_rng(123)
        q = QTable(np.array([[5.0, 0.0, 0.0, 0.0]]))
        draws = np.array([int(select_action(q, 0, 1.0, rng)) for _ in range(10_000)])
        freq = np.bincount(draws, minlength=4) / draws.size
        assert np.all(np.abs(freq - 0.25) <= 0.02)


class TestQUpdate:
    def test_reduces_to_plain_q_learning(self):
        q1 = QTable(np.array([[0.3, -0.2, 0.0, 0.1], [1.0, 2.0, -1.0, 0.5]]), alpha=0.5, gamma=0.9)
        shaping = ShapingTable(np.full((2, 2), 0.7))
        q_update(q1, 0, 3, -1.0, 1, False, 0.0, shaping)
        # Bellman optimality update by hand
        assert q1.values[0, 3] == pytest.approx(0.1 + 0.5 * (-1.0 + 0.9 * 2.0 - 0.1))

    def test_shaped_update(self):
        q = QTable.zeros(2, alpha=0.5, gamma=0.9)
        shaping = ShapingTable(np.array([[0.0, 0.2], [0.0, 0.0]]))
        bonus = q_update(q, 0, int(Action.RIGHT), -1.0, 1, False, 1.0, shaping)
        assert bonus == pytest.approx(0.2)
        assert q.values[0, int(Action.RIGHT)] == pytest.approx(-0.4)
        assert shaping.bonus[0, 1] == 0

    def test_terminal_ignores_bootstrap(self):
        q = QTable.zeros(2, alpha=0.5, gamma=0.9)
        q.values[1] = 100.0
        q_update(q, 0, int(Action.RIGHT), 10.0, 1, True, 1.0, ShapingTable.zeros(2))
        assert q.values[0, int(Action.RIGHT)] == pytest.approx(5.0)

    def test_bonus_applied_once(self):
        q = QTable.zeros(2, alpha=1.0, gamma=0.5)
        shaping = ShapingTable(np.array([[0.0, 0.3], [0.0, 0.0]]))
        assert q_update(q, 0, 3, 0.0, 1, False, 1.0, shaping) == pytest.approx(0.3)
        assert q_update(q, 0, 3, 0.0, 1, False, 1.0, shaping) == 0.0


class TestSchedules:
    def test_epsilon_values(self):
        sched = EpsilonSchedule(1.0, 0.5, 0.2)
        assert [sched.value(t) for t in range(4)] == [1.0, 0.5, 0.25, 0.2]

    def test_default_schedule_monotone(self):
        sched = EpsilonSchedule()
        values = [sched.value(t) for t in range(2000)]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert min(values) == sched.minimum

    @pytest.mark.parametrize("kw", [{"initial": 1.5}, {"decay": 0.0}, {"minimum": 0.9, "initial": 0.5}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            EpsilonSchedule(**kw)

    def test_agent_config_defaults(self):
        cfg = AgentConfig()
        assert (cfg.alpha, cfg.gamma, cfg.beta) == (0.1, 0.95, 1.0)
        assert (cfg.epsilon.initial, cfg.epsilon.decay, cfg.epsilon.minimum) == (1.0, 0.995, 0.01)

    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"gamma": 1.0}, {"beta": -1}, {"seed": -3}, {"mode": "sarsa"}])
    def test_agent_config_invalid(self, kw):
        with pytest.raises(ValueError):
            AgentConfig(**kw)

    def test_from_dict(self):
        cfg = AgentConfig.from_dict({"beta": 2.0, "epsilon": {"min": 0.05}, "mode": "baseline"})
        assert cfg.beta == 2.0 and cfg.epsilon.minimum == 0.05 and cfg.mode is AgentMode.BASELINE
        assert cfg.effective_beta == 0.0


class TestRunEpisode:
    def test_greedy_corridor(self):
        env = corridor(3)
        q = QTable.zeros(3)
        q.values[:, int(Action.RIGHT)] = 1.0
        record, visits = run_episode(
            env, q, AgentConfig(), ShapingTable.zeros(3), np.random.default_rng(0), epsilon=0.0
        )
        assert (record.length, record.return_undiscounted, record.collisions) == (2, 9.0, 0)
        assert record.return_discounted == pytest.approx(-1 + 0.95 * 10)
        np.testing.assert_array_equal(visits.counts, [1, 1, 1])

    def test_bump_loop_hits_cap(self):
        env = GridworldEnv(3, 1, frozenset({(1, 0)}), start=(0, 0), goal=(2, 0), max_steps=37)
        q = QTable.zeros(3)
        q.values[0] = [-100.0, -100.0, -100.0, 0.0]  # RIGHT into the obstacle, forever
        record, visits = run_episode(
            env, q, AgentConfig(alpha=1e-9), ShapingTable.zeros(3), np.random.default_rng(0), epsilon=0.0
        )
        assert record.collisions == record.length == 37
        assert visits.counts[0] == 38

    def test_beta_zero_matches_baseline(self, small_env):
        risk, cost = problem(small_env)
        runs = []
        for mode in AgentMode:
            cfg = AgentConfig(beta=0.0, mode=mode, seed=11)
            runs.append(train(small_env, risk, cost, cfg, episodes=60))
        (base, ot) = runs
        assert base.records == [replace(r, mode=AgentMode.BASELINE) for r in ot.records]
        np.testing.assert_array_equal(base.qtable.values, ot.qtable.values)


class TestTrain:
    def test_single_episode_has_no_shaping(self, small_env):
        risk, cost = problem(small_env)
        bonuses = []
        result = train(
            small_env, risk, cost, AgentConfig(seed=3), episodes=1,
            on_update=lambda ep, s, a, s2, b: bonuses.append(b),
        )
        assert len(result.records) == 1
        assert bonuses and all(b == 0 for b in bonuses)

    def test_shaping_invariants(self, small_env):
        risk, cost = problem(small_env)
        applied: dict[int, set] = {}
        bonus_log = []

        def hook(ep, s, a, s2, bonus):
            bonus_log.append(bonus)
            if bonus > 0:
                pairs = applied.setdefault(ep, set())
                assert (s, s2) not in pairs
                pairs.add((s, s2))

        train(small_env, risk, cost, AgentConfig(seed=5), episodes=30, on_update=hook)
        assert min(bonus_log) >= 0
        assert any(b > 0 for b in bonus_log)

    def test_q_bounded(self, small_env):
        risk, cost = problem(small_env)
        cfg = AgentConfig(seed=1, beta=3.0)
        result = train(small_env, risk, cost, cfg, episodes=40)
        r_max = max(abs(small_env.reward_step), abs(small_env.reward_obstacle), abs(small_env.reward_goal))
        bound = (r_max + cfg.beta * cost.entries.max()) / (1 - cfg.gamma)
        assert np.abs(result.qtable.values).max() <= bound

    def test_deterministic(self, small_env):
        risk, cost = problem(small_env)
        a = train(small_env, risk, cost, AgentConfig(seed=9), episodes=25)
        b = train(small_env, risk, cost, AgentConfig(seed=9), episodes=25)
        assert a.records == b.records
        np.testing.assert_array_equal(a.qtable.values, b.qtable.values)

    def test_power_estimator(self, small_env):
        risk, cost = problem(small_env)
        result = train(
            small_env, risk, cost, AgentConfig(seed=2), episodes=10,
            stationary=StationaryConfig(method="power"),
        )
        assert all(np.isfinite(r.wasserstein) and r.wasserstein >= 0 for r in result.records)

    def test_epsilon_logged(self, small_env):
        risk, cost = problem(small_env)
        cfg = AgentConfig(seed=0, epsilon=EpsilonSchedule(0.5, 0.9, 0.1))
        result = train(small_env, risk, cost, cfg, episodes=5)
        assert [r.epsilon for r in result.records] == [cfg.epsilon.value(t) for t in range(5)]

    def test_record_invariants(self, small_env):
        risk, cost = problem(small_env)
        for r in train(small_env, risk, cost, AgentConfig(seed=4), episodes=20).records:
            assert r.collisions <= r.length <= small_env.max_steps

    def test_rejects_mismatched_problem(self, small_env):
        risk, cost = problem(corridor(4))
        with pytest.raises(ValidationError):
            train(small_env, risk, cost, AgentConfig(), episodes=1)
        with pytest.raises(ValidationError):
            train(small_env, *problem(small_env), AgentConfig(), episodes=0)

    def test_canonical_runs(self):
        env = canonical_env()
        result = train(env, *problem(env), AgentConfig(seed=0), episodes=3)
        assert len(result.records) == 3
