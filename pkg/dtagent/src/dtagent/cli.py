"""Command line: ``dtagent train | evaluate | serve``.

Exit codes: 0 on success, 1 on a failed run (bad data, broken checkpoint,
benchmark failure), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys

from .agent import serve
from .data import DataError
from .evaluate import EvaluationError, evaluate
from .model import ACTION_HEADS, CheckpointError, ModelConfig
from .train import train_model

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtagent",
        description="train, score, and serve a return-conditioned query policy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model to a JSONL dataset")
    train.add_argument("--data", required=True, help="JSONL(.gz) dataset path")
    train.add_argument("--out", required=True, help="checkpoint directory to create")
    train.add_argument("--k", type=int, required=True, help="action width")
    train.add_argument(
        "--context-steps",
        type=int,
        default=None,
        help="episode capacity l (default: 2k)",
    )
    train.add_argument("--embed-dim", type=int, default=128)
    train.add_argument("--layers", type=int, default=3)
    train.add_argument("--heads", type=int, default=4)
    train.add_argument(
        "--no-bounds-prefix",
        action="store_true",
        help="drop the k leading bounds tokens from the sequence",
    )
    train.add_argument("--action-head", choices=ACTION_HEADS, default="factored")
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--batch-size", type=int, default=256)
    train.add_argument("--epochs", type=int, default=3)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    train.add_argument("--json", action="store_true", help="machine-readable summary")

    ev = sub.add_parser("evaluate", help="sweep initial RTG values through the benchmark")
    ev.add_argument("--checkpoint", required=True, help="checkpoint directory")
    ev.add_argument("--trials", type=int, default=1000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument(
        "--rtg",
        type=int,
        action="append",
        default=None,
        help="candidate initial RTG (repeatable; default: -1 down to -l)",
    )
    ev.add_argument(
        "--bench-cmd",
        default=None,
        help="benchmark CLI to drive (default: qgtbench from PATH)",
    )
    ev.add_argument("--agent-timeout", type=float, default=60.0)
    ev.add_argument("--json", action="store_true", help="machine-readable report")

    sv = sub.add_parser("serve", help="speak the bridge protocol on stdio")
    sv.add_argument("--checkpoint", required=True, help="checkpoint directory")

    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    context_steps = args.context_steps if args.context_steps is not None else 2 * args.k
    config = ModelConfig(
        k=args.k,
        context_steps=context_steps,
        embed_dim=args.embed_dim,
        num_layers=args.layers,
        num_heads=args.heads,
        bounds_prefix=not args.no_bounds_prefix,
        action_head=args.action_head,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    progress = None
    if not args.quiet and not args.json:
        progress = lambda epoch, loss: print(f"epoch {epoch + 1}/{config.epochs}  loss {loss:.6f}")
    result = train_model(args.data, config, args.out, progress=progress)
    if args.json:
        print(
            json.dumps(
                {
                    "checkpoint": str(result.checkpoint_dir),
                    "episodes": result.episodes,
                    "steps": result.steps,
                    "epoch_loss": list(result.epoch_loss),
                }
            )
        )
    else:
        print(
            f"trained on {result.episodes} episodes ({result.steps} steps); "
            f"final loss {result.final_loss:.6f}; checkpoint at {result.checkpoint_dir}"
        )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    bench_cmd = shlex.split(args.bench_cmd) if args.bench_cmd else None
    report = evaluate(
        args.checkpoint,
        trials=args.trials,
        seed=args.seed,
        rtg_values=args.rtg,
        bench_cmd=bench_cmd,
        agent_timeout=args.agent_timeout,
    )
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(f"k={report.k}  trials per RTG: {report.trials}")
        for outcome in report.outcomes:
            flag = "  DEGRADED" if outcome.degraded else ""
            print(
                f"  rtg {outcome.rtg:>4}: mean {outcome.mean:.4f} ± {outcome.ci95:.4f}"
                f"  solve rate {outcome.solve_rate:.4f}  failures {outcome.failures}{flag}"
            )
        best = report.best
        if best is None:
            print("  no finite result")
        else:
            print(f"best: rtg {best.rtg} with mean {best.mean:.4f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "serve":
            return serve(args.checkpoint)
    except (DataError, CheckpointError, EvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
