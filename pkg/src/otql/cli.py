"""Command-line entry point: ``otql run | compare | ot-check``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from otql.agent import AgentMode
from otql.errors import OtqlError, ValidationError
from otql.harness import ExperimentConfig, load_config, run_comparison, write_outputs
from otql.ot_core import (
    EXACT_MARGINAL_TOL,
    OtMethod,
    OtSolverConfig,
    build_cost_matrix,
    marginal_residuals,
    solve_ot,
    verify_plan,
    wasserstein_distance,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON (defaults apply when omitted)")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    p.add_argument("--seeds", type=_parse_seeds, help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--episodes", type=int, help="episodes per run")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otql", description="OT-assisted risk-sensitive Q-learning experiments."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a single mode over all seeds")
    _add_experiment_flags(run)
    run.add_argument(
        "--mode", choices=[m.value for m in AgentMode], help="agent mode (default: agent.mode from config)"
    )

    compare = sub.add_parser("compare", help="train baseline and OT-assisted agents side by side")
    _add_experiment_flags(compare)

    check = sub.add_parser("ot-check", help="solve one transport problem from JSON files")
    check.add_argument("--source", type=Path, required=True, help="JSON array of source masses")
    check.add_argument("--target", type=Path, required=True, help="JSON array of target masses")
    check.add_argument("--coords", type=Path, required=True, help="JSON array of [x, y] coordinates")
    check.add_argument("--method", choices=[m.value for m in OtMethod], default=OtMethod.EXACT.value)
    check.add_argument("--p", type=float, default=1.0, help="Wasserstein order (default: 1)")
    check.add_argument("--sinkhorn-reg", type=float, default=OtSolverConfig.sinkhorn_reg)
    check.add_argument("--sinkhorn-tol", type=float, default=OtSolverConfig.sinkhorn_tol)
    check.add_argument("--sinkhorn-max-iter", type=int, default=OtSolverConfig.sinkhorn_max_iter)
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    overrides: dict[str, Any] = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    return replace(config, **overrides) if overrides else config


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.command == "run":
        modes: Sequence[AgentMode] = (AgentMode(args.mode) if args.mode else config.agent.mode,)
    else:
        modes = (AgentMode.BASELINE, AgentMode.OT_ASSISTED)
    results = run_comparison(config, modes, jobs=args.jobs)
    if not results.records:
        for err in results.errors:
            print(f"error: seed={err.seed} mode={err.mode.value}: {err.message}", file=sys.stderr)
        return EXIT_RUNTIME
    paths = write_outputs(results, args.out)
    for mode in results.modes:
        stats = results.summary["per_mode"][mode.value]
        if stats.get("seeds"):
            conv = stats["convergence_episode_per_seed"]
            print(
                f"{mode.value:>8}: collisions={stats['total_collisions']} "
                f"final W={stats['mean_wasserstein_final']:.4f} convergence={conv}"
            )
    if "collision_ratio" in results.summary:
        print(f"collision ratio (ot / baseline): {results.summary['collision_ratio']:.3f}")
    print(f"wrote {paths['episodes']}, {paths['smoothed']}, {paths['summary']}")
    for err in results.errors:
        print(f"error: seed={err.seed} mode={err.mode.value}: {err.message}", file=sys.stderr)
    return EXIT_RUNTIME if results.errors else EXIT_OK


def _read_json(path: Path, key: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if isinstance(data, dict):
        if key not in data:
            raise ValidationError(f"{path}: expected a JSON array or an object with key {key!r}")
        data = data[key]
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON array")
    return data


def _cmd_ot_check(args: argparse.Namespace) -> int:
    source = _read_json(args.source, "mass")
    target = _read_json(args.target, "mass")
    coords = _read_json(args.coords, "coords")
    if not (len(source) == len(target) == len(coords)):
        raise ValidationError(
            f"dimension mismatch: source={len(source)} target={len(target)} coords={len(coords)}"
        )
    config = OtSolverConfig(
        method=args.method,
        sinkhorn_reg=args.sinkhorn_reg,
        sinkhorn_tol=args.sinkhorn_tol,
        sinkhorn_max_iter=args.sinkhorn_max_iter,
    )
    cost = build_cost_matrix(coords)
    plan = solve_ot(source, target, cost, config)
    tol = EXACT_MARGINAL_TOL if config.method is OtMethod.EXACT else config.sinkhorn_tol
    ok = verify_plan(plan, tol)
    row, col = marginal_residuals(plan)
    print(f"objective: {plan.objective(cost):.10g}")
    print(f"wasserstein (p={args.p:g}): {wasserstein_distance(plan, cost, args.p):.10g}")
    print(f"row residual: {row:.3e}")
    print(f"column residual: {col:.3e}")
    print(f"plan valid: {'yes' if ok else 'no'} (tol={tol:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "ot-check":
            return _cmd_ot_check(args)
        return _cmd_experiment(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OtqlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
