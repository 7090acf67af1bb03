"""Experiment orchestration: configs, multi-seed runs, aggregation, export."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from otql import __version__
from otql.agent import AgentConfig, AgentMode, EpisodeRecord, train
from otql.errors import OtqlError, ValidationError
from otql.gridworld import GridworldEnv, canonical_env, load_env, load_env_file, state_coords
from otql.ot_core import OtSolverConfig, build_cost_matrix
from otql.policy_analysis import StationaryConfig
from otql.risk_model import RiskSpec, build_risk_distribution

log = logging.getLogger(__name__)

CSV_HEADER = (
    "episode",
    "seed",
    "mode",
    "return",
    "return_discounted",
    "length",
    "collisions",
    "epsilon",
    "wasserstein",
)
SMOOTHED_HEADER = tuple(h for h in CSV_HEADER if h != "seed")
METRICS = ("return", "return_discounted", "length", "collisions", "epsilon", "wasserstein")
_RECORD_FIELD = {
    "return": "return_undiscounted",
    "return_discounted": "return_discounted",
    "length": "length",
    "collisions": "collisions",
    "epsilon": "epsilon",
    "wasserstein": "wasserstein",
}
MODE_ORDER = (AgentMode.BASELINE, AgentMode.OT_ASSISTED)

CONVERGENCE_WINDOW = 20
CONVERGENCE_TOL = 0.05
CONVERGENCE_FINAL_WINDOW = 100
SMOOTHING_WINDOW = 10
FINAL_WASSERSTEIN_WINDOW = 50


@dataclass(frozen=True)
class ExperimentConfig:
    env: GridworldEnv = field(default_factory=canonical_env)
    risk: RiskSpec = field(default_factory=RiskSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    ot: OtSolverConfig = field(default_factory=OtSolverConfig)
    stationary: StationaryConfig = field(default_factory=StationaryConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    episodes: int = 500
    wasserstein_p: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ValidationError("seeds must be unsigned integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        if isinstance(self.episodes, bool) or not isinstance(self.episodes, int) or self.episodes < 1:
            raise ValidationError(f"episodes must be a positive integer, got {self.episodes!r}")
        if not self.wasserstein_p >= 1:
            raise ValidationError(f"wasserstein_p must be >= 1, got {self.wasserstein_p}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - {"env", "risk", "agent", "ot", "stationary", "train"}
        if unknown:
            raise ValidationError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        env = data.get("env")
        if isinstance(env, str):
            path = Path(env)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            kwargs["env"] = load_env_file(path)
        elif env is not None:
            kwargs["env"] = load_env(env)
        kwargs["risk"] = RiskSpec.from_dict(data.get("risk"))
        kwargs["agent"] = AgentConfig.from_dict(data.get("agent"))
        kwargs["ot"] = OtSolverConfig.from_dict(data.get("ot"))
        kwargs["stationary"] = StationaryConfig.from_dict(data.get("stationary"))
        train_cfg = dict(data.get("train") or {})
        unknown = set(train_cfg) - {"episodes", "seeds", "wasserstein_p"}
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        if "seeds" in train_cfg:
            kwargs["seeds"] = tuple(train_cfg["seeds"])
        if "episodes" in train_cfg:
            kwargs["episodes"] = train_cfg["episodes"]
        if "wasserstein_p" in train_cfg:
            kwargs["wasserstein_p"] = float(train_cfg["wasserstein_p"])
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "env": self.env.to_dict(),
            "risk": self.risk.to_dict(),
            "agent": self.agent.to_dict(),
            "ot": self.ot.to_dict(),
            "stationary": self.stationary.to_dict(),
            "train": {
                "episodes": self.episodes,
                "seeds": list(self.seeds),
                "wasserstein_p": self.wasserstein_p,
            },
        }


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


@dataclass
class RunError:
    seed: int
    mode: AgentMode
    kind: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "mode": self.mode.value, "kind": self.kind, "message": self.message}


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    modes: tuple[AgentMode, ...]
    records: list[EpisodeRecord]
    errors: list[RunError]
    summary: dict[str, Any]

    def for_run(self, seed: int, mode: AgentMode) -> list[EpisodeRecord]:
        return [r for r in self.records if r.seed == seed and r.mode is mode]

    def metric(self, mode: AgentMode, name: str) -> np.ndarray:
        """``(n_seeds, episodes)`` array of one metric for completed seeds."""
        attr = _RECORD_FIELD[name]
        rows = []
        for seed in self.config.seeds:
            recs = self.for_run(seed, mode)
            if recs:
                rows.append([getattr(r, attr) for r in recs])
        return np.array(rows, dtype=np.float64)


def _train_one(config: ExperimentConfig, seed: int, mode: AgentMode):
    env = config.env
    cost = build_cost_matrix(state_coords(env))
    risk = build_risk_distribution(env, config.risk)
    agent = AgentConfig(
        alpha=config.agent.alpha,
        gamma=config.agent.gamma,
        beta=config.agent.beta,
        epsilon=config.agent.epsilon,
        mode=mode,
        seed=seed,
    )
    started = time.perf_counter()
    try:
        result = train(
            env,
            risk,
            cost,
            agent,
            config.ot,
            config.episodes,
            config.stationary,
            config.wasserstein_p,
        )
    except OtqlError as exc:
        return None, RunError(seed, mode, type(exc).__name__, str(exc))
    log.info("seed=%d mode=%s finished in %.1fs", seed, mode.value, time.perf_counter() - started)
    return result.records, None


def run_comparison(
    config: ExperimentConfig,
    modes: Sequence[AgentMode | str] = MODE_ORDER,
    jobs: int = 1,
) -> ExperimentResults:
    """Train every (seed, mode) pair and aggregate the results.

    A failing run is recorded in ``errors`` and the remaining runs still
    complete. Results are ordered by seed, then mode, regardless of ``jobs``.
    """
    modes = tuple(AgentMode(m) for m in modes)
    items = [(seed, mode) for seed in config.seeds for mode in modes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_train_one, [config] * len(items), *zip(*items)))
    else:
        outcomes = [_train_one(config, seed, mode) for seed, mode in items]

    records: list[EpisodeRecord] = []
    errors: list[RunError] = []
    for (seed, mode), (recs, err) in zip(items, outcomes):
        if err is not None:
            log.error("seed=%d mode=%s failed: %s", seed, mode.value, err.message)
            errors.append(err)
        else:
            records.extend(recs)
    results = ExperimentResults(config, modes, records, errors, {})
    results.summary = summarize(results)
    return results


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Full-window moving average; element ``k`` covers ``values[k-window+1..k]``."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValidationError("window must be positive")
    if values.size < window:
        return np.empty(0)
    csum = np.cumsum(np.concatenate(([0.0], values)))
    return (csum[window:] - csum[:-window]) / window


def trailing_average(values: Sequence[float], window: int) -> np.ndarray:
    """Moving average that averages whatever is available for early points."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    for k in range(values.size):
        out[k] = values[max(0, k - window + 1) : k + 1].mean()
    return out


def convergence_episode(
    returns: Sequence[float],
    window: int = CONVERGENCE_WINDOW,
    tol: float = CONVERGENCE_TOL,
    final_window: int = CONVERGENCE_FINAL_WINDOW,
) -> int | None:
    """First 0-based episode from which the moving-average return stays near its final level.

    The final level is the mean of the last ``final_window`` returns; "near"
    means within ``tol`` times its magnitude. The reported episode is the
    last episode of the first qualifying window. Returns ``None`` when the
    moving average is off-target at the very end.
    """
    returns = np.asarray(returns, dtype=np.float64)
    ma = moving_average(returns, window)
    if ma.size == 0:
        return None
    final = returns[-final_window:].mean()
    ok = np.abs(ma - final) <= tol * abs(final)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    first = 0 if bad.size == 0 else int(bad[-1]) + 1
    return first + window - 1


def _clean(value: float) -> float | None:
    return None if isinstance(value, float) and math.isnan(value) else value


def summarize(results: ExperimentResults) -> dict[str, Any]:
    config = results.config
    summary: dict[str, Any] = {
        "config": config.to_dict(),
        "modes": [m.value for m in results.modes],
        "errors": [e.to_dict() for e in results.errors],
        "per_mode": {},
    }
    for mode in results.modes:
        completed = [s for s in config.seeds if results.for_run(s, mode)]
        if not completed:
            summary["per_mode"][mode.value] = {"seeds": []}
            continue
        per_seed_collisions = {}
        per_seed_convergence = {}
        for seed in completed:
            recs = results.for_run(seed, mode)
            per_seed_collisions[str(seed)] = int(sum(r.collisions for r in recs))
            per_seed_convergence[str(seed)] = convergence_episode([r.return_undiscounted for r in recs])
        aggregates = {}
        for name in METRICS:
            values = results.metric(mode, name)
            aggregates[name] = {
                "mean": [_clean(float(v)) for v in values.mean(axis=0)],
                "std": [_clean(float(v)) for v in values.std(axis=0)],
            }
        wass = results.metric(mode, "wasserstein")
        summary["per_mode"][mode.value] = {
            "seeds": completed,
            "total_collisions": int(sum(per_seed_collisions.values())),
            "collisions_per_seed": per_seed_collisions,
            "convergence_episode_per_seed": per_seed_convergence,
            "mean_wasserstein_final": _clean(float(wass[:, -FINAL_WASSERSTEIN_WINDOW:].mean())),
            "aggregates": aggregates,
        }
    if set(MODE_ORDER) <= set(results.modes):
        base = summary["per_mode"][AgentMode.BASELINE.value].get("total_collisions")
        ot_total = summary["per_mode"][AgentMode.OT_ASSISTED.value].get("total_collisions")
        if base:
            summary["collision_ratio"] = ot_total / base
    summary["convergence_detector"] = {
        "window": CONVERGENCE_WINDOW,
        "tolerance": CONVERGENCE_TOL,
        "final_window": CONVERGENCE_FINAL_WINDOW,
    }
    return summary


def _fmt(value: float) -> str:
    return format(float(value), ".6g")


def _record_row(r: EpisodeRecord) -> list[str]:
    return [
        str(r.episode),
        str(r.seed),
        r.mode.value,
        _fmt(r.return_undiscounted),
        _fmt(r.return_discounted),
        str(r.length),
        str(r.collisions),
        _fmt(r.epsilon),
        _fmt(r.wasserstein),
    ]


def export_csv(results: ExperimentResults | Iterable[EpisodeRecord], path: str | Path) -> Path:
    """Write one row per episode record with the fixed header."""
    records = results.records if isinstance(results, ExperimentResults) else list(results)
    if not records:
        raise ValidationError("no episode records to export")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(_record_row(r))
    return path


def export_smoothed_csv(results: ExperimentResults, path: str | Path, window: int = SMOOTHING_WINDOW) -> Path:
    """Seed-averaged curves per mode, each smoothed with a trailing average."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SMOOTHED_HEADER)
        for mode in results.modes:
            columns = {}
            for name in METRICS:
                values = results.metric(mode, name)
                if values.size == 0:
                    break
                columns[name] = trailing_average(values.mean(axis=0), window)
            if len(columns) != len(METRICS):
                continue
            for ep in range(results.config.episodes):
                writer.writerow([str(ep), mode.value] + [_fmt(columns[m][ep]) for m in METRICS])
    return path


def read_csv(path: str | Path) -> list[EpisodeRecord]:
    """Parse a file written by :func:`export_csv`."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValidationError(f"unexpected CSV header {header}")
        return [
            EpisodeRecord(
                episode=int(row[0]),
                seed=int(row[1]),
                mode=AgentMode(row[2]),
                return_undiscounted=float(row[3]),
                return_discounted=float(row[4]),
                length=int(row[5]),
                collisions=int(row[6]),
                epsilon=float(row[7]),
                wasserstein=float(row[8]),
            )
            for row in reader
        ]


def write_outputs(results: ExperimentResults, out_dir: str | Path) -> dict[str, Path]:
    """Write ``episodes.csv``, ``episodes_smoothed.csv`` and ``summary.json``.

    Only the ``metadata`` block of the summary varies between identical runs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "episodes": export_csv(results, out / "episodes.csv"),
        "smoothed": export_smoothed_csv(results, out / "episodes_smoothed.csv"),
        "summary": out / "summary.json",
    }
    summary = dict(results.summary)
    summary["metadata"] = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "out_dir": str(out.resolve()),
        "otql_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(paths["summary"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return paths
