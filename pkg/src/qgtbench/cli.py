"""Command-line interface: bounds, benchmarks, dataset export, trace dumps.

Exit codes: 0 on success, 1 when a benchmark report is degraded (external
agent failing more than 1% of trials), 2 on invalid usage or any domain
error (including recovery mismatches).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import (
    BenchReport,
    bench_end_to_end,
    bench_per_stage,
    bounds_row,
    bound_adaptive,
    bound_m0,
)
from .bridge import ExternalStrategy
from .core import QgtError, inner_answer, random_incidence
from .dataset import generate_dataset
from .splitting import SolveConfig, StageReport, solve_qgt
from .strategies import STRATEGY_NAMES, make_strategy

__all__ = ["main", "build_parser"]


def _fmt(value: float | None, digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qgtbench",
        description="Adaptive quantitative group testing workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bounds = sub.add_parser("bounds", help="print reference query bounds")
    p_bounds.add_argument("--n", type=int, required=True, help="number of items")
    p_bounds.add_argument("--k", type=int, required=True, help="number of defectives")
    p_bounds.add_argument("--json", action="store_true", help="machine-readable output")

    p_bench = sub.add_parser("bench", help="benchmark a query strategy")
    p_bench.add_argument("--k", type=int, required=True)
    p_bench.add_argument(
        "--strategy",
        required=True,
        choices=STRATEGY_NAMES + ("external",),
    )
    p_bench.add_argument("--trials", type=int, default=None,
                         help="default: 100000 per-stage, 10000 end-to-end")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--n", type=int, default=None,
                         help="run the full driver on n items instead of standalone stages")
    p_bench.add_argument("--agent-cmd", default=None,
                         help="external agent command line (strategy=external)")
    p_bench.add_argument("--agent-rtg", type=int, default=-1,
                         help="initial return-to-go sent to the external agent")
    p_bench.add_argument("--agent-timeout", type=float, default=10.0)
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.add_argument("--max-steps", type=int, default=None)
    p_bench.add_argument("--json", action="store_true")

    p_gen = sub.add_parser("gen-dataset", help="export a trajectory dataset as JSONL")
    p_gen.add_argument("--k", type=int, required=True)
    p_gen.add_argument("--strategy", required=True, choices=STRATEGY_NAMES)
    p_gen.add_argument("--episodes", type=int, required=True)
    p_gen.add_argument("--out", required=True, help="output path (.gz for compressed)")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--max-steps", type=int, default=None)
    p_gen.add_argument("--include-unsolved", action="store_true")
    p_gen.add_argument("--final-reward", type=int, default=-1, choices=(-1, 0))
    p_gen.add_argument("--gzip", action="store_true", help="compress regardless of suffix")
    p_gen.add_argument("--json", action="store_true")

    p_solve = sub.add_parser("solve", help="trace one full recovery run")
    p_solve.add_argument("--n", type=int, required=True)
    p_solve.add_argument("--k", type=int, required=True)
    p_solve.add_argument(
        "--strategy",
        required=True,
        choices=STRATEGY_NAMES + ("external",),
    )
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--agent-cmd", default=None)
    p_solve.add_argument("--agent-rtg", type=int, default=-1)
    p_solve.add_argument("--agent-timeout", type=float, default=10.0)
    p_solve.add_argument("--prune-saturated", action="store_true")
    p_solve.add_argument("--json", action="store_true")
    return parser


def _make_cli_strategy(args, k: int):
    if args.strategy == "external":
        if not args.agent_cmd:
            raise QgtError("--strategy external requires --agent-cmd")
        return ExternalStrategy(
            args.agent_cmd, k=k, initial_rtg=args.agent_rtg, timeout=args.agent_timeout
        )
    return make_strategy(args.strategy)


def _print_report(report: BenchReport, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report.to_dict()))
        return
    mode = "end-to-end" if report.n is not None else "per-stage"
    scope = f"n={report.n}, k={report.k}" if report.n is not None else f"k={report.k}"
    print(f"{mode} bench: strategy={report.strategy} {scope} trials={report.trials}")
    print(
        f"  mean queries {report.mean_queries:.4f}  "
        f"(std {report.stddev:.4f}, 95% CI +/-{report.ci95:.4f})"
    )
    print(f"  solve rate {report.solve_rate:.4f}  failures {report.failures}")
    b = report.bounds
    print(
        f"  bounds: per-stage floor {_fmt(b['per_stage_lb'])}, "
        f"baseline {_fmt(b['baseline'])}, m0 {_fmt(b['m0'])}, "
        f"adaptive {_fmt(b['adaptive_lb'])}"
    )
    if report.per_stage_means is not None:
        stages = ", ".join(f"{m:.3f}" for m in report.per_stage_means)
        print(f"  per-stage means: [{stages}]")
    if report.degraded:
        print("  WARNING: report degraded (external failure rate > 1%)")


def _cmd_bounds(args) -> int:
    row = bounds_row(args.k, args.n)
    if args.json:
        print(json.dumps({"n": args.n, "k": args.k, **row}))
    else:
        print(f"bounds for n={args.n}, k={args.k}")
        print(f"  non-adaptive m0:      {_fmt(row['m0'])}")
        print(f"  adaptive (m0/2):      {_fmt(row['adaptive_lb'])}")
        print(f"  per-stage floor:      {_fmt(row['per_stage_lb'])}")
        print(f"  per-stage baseline:   {_fmt(row['baseline'])}")
    return 0


def _cmd_bench(args) -> int:
    strategy = _make_cli_strategy(args, args.k)
    if args.strategy == "external" and args.workers > 1:
        raise QgtError("external strategy supports --workers 1 only")
    if args.workers > 1:
        strategy = args.strategy  # worker processes rebuild it by name
    if args.n is not None:
        trials = args.trials if args.trials is not None else 10_000
        report = bench_end_to_end(
            args.n, args.k, strategy, trials=trials, seed=args.seed, workers=args.workers
        )
    else:
        trials = args.trials if args.trials is not None else 100_000
        report = bench_per_stage(
            args.k,
            strategy,
            trials=trials,
            seed=args.seed,
            workers=args.workers,
            max_steps=args.max_steps,
        )
    _print_report(report, args.json)
    return 1 if report.degraded else 0


def _cmd_gen_dataset(args) -> int:
    summary = generate_dataset(
        args.k,
        args.strategy,
        args.episodes,
        args.seed,
        args.out,
        max_steps=args.max_steps,
        include_unsolved=args.include_unsolved,
        final_reward=args.final_reward,
        compress=args.gzip,
    )
    if args.json:
        print(
            json.dumps(
                {
                    "out": args.out,
                    "episodes_written": summary.episodes_written,
                    "episodes_generated": summary.episodes_generated,
                    "mean_length": summary.mean_length,
                    "solve_rate": summary.solve_rate,
                }
            )
        )
    else:
        print(
            f"wrote {summary.episodes_written}/{summary.episodes_generated} episodes "
            f"to {args.out} (mean length {summary.mean_length:.3f}, "
            f"solve rate {summary.solve_rate:.4f})"
        )
    return 0


def _cmd_solve(args) -> int:
    rng = np.random.default_rng(args.seed)
    x = random_incidence(args.n, args.k, rng)
    strategy = _make_cli_strategy(args, args.k)
    config = SolveConfig(prune_saturated=args.prune_saturated)
    stages: list[StageReport] = []
    recovered, log = solve_qgt(x, strategy, rng, config=config, on_stage=stages.append)
    if args.json:
        payload = {
            "n": args.n,
            "k": args.k,
            "strategy": args.strategy,
            "seed": args.seed,
            "defectives": list(x.indices()),
            "initial_queries": log.initial_queries,
            "per_stage": list(log.per_stage),
            "total": log.total,
            "recovered": list(recovered.indices()),
            "stages": [
                {
                    "stage": s.stage,
                    "bounds": list(s.trajectory.bounds.u) if s.trajectory else [],
                    "queries": s.trajectory.num_queries if s.trajectory else 0,
                    "left_ranges": [list(r) for r in s.left_ranges],
                }
                for s in stages
            ],
        }
        print(json.dumps(payload))
    else:
        print(f"solve: n={args.n} k={args.k} strategy={args.strategy} seed={args.seed}")
        print(f"  defectives at {list(x.indices())}")
        print(f"  initial group measurements: {log.initial_queries}")
        for s in stages:
            if s.trajectory is None:
                print(f"  stage {s.stage}: all groups resolved without queries")
                continue
            trace = " ".join(
                "".join(map(str, step.action))
                + f"->{inner_answer(s.trajectory.target, step.action)}"
                for step in s.trajectory.steps
            )
            print(
                f"  stage {s.stage}: bounds {list(s.trajectory.bounds.u)} "
                f"-> {s.trajectory.num_queries} queries  {trace}"
            )
        print(f"  total queries: {log.total}")
        print(f"  recovered defectives at {list(recovered.indices())}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "bounds": _cmd_bounds,
        "bench": _cmd_bench,
        "gen-dataset": _cmd_gen_dataset,
        "solve": _cmd_solve,
    }
    try:
        return handlers[args.command](args)
    except (QgtError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
