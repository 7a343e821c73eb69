"""Score a checkpoint by sweeping the initial return-to-go.

For each candidate initial RTG (``-1`` down to ``-context_steps`` by
default) the benchmark CLI runs ``trials`` standalone instances against
``dtagent serve`` over the bridge protocol and reports the mean query
count; the sweep keeps the best (lowest) mean.  Runs that the benchmark
marks degraded (external failure rate above its threshold) still count,
with their failure totals reported.
"""

from __future__ import annotations

import json
import math
import shlex
import shutil
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

from .model import load_checkpoint

__all__ = ["EvalReport", "EvaluationError", "RtgOutcome", "evaluate", "default_bench_command"]


class EvaluationError(Exception):
    """The benchmark CLI failed or produced unreadable output."""


@dataclass(frozen=True)
class RtgOutcome:
    """Benchmark summary for one initial return-to-go value."""

    rtg: int
    mean: float
    stddev: float
    ci95: float
    solve_rate: float
    failures: int
    degraded: bool
    trials: int

    def to_dict(self) -> dict:
        return {
            "rtg": self.rtg,
            "mean": self.mean,
            "stddev": self.stddev,
            "ci95": self.ci95,
            "solve_rate": self.solve_rate,
            "failures": self.failures,
            "degraded": self.degraded,
            "trials": self.trials,
        }


@dataclass(frozen=True)
class EvalReport:
    """Full sweep: one outcome per candidate initial RTG, best first pick."""

    k: int
    trials: int
    outcomes: tuple[RtgOutcome, ...]

    @property
    def best(self) -> RtgOutcome | None:
        finite = [o for o in self.outcomes if math.isfinite(o.mean)]
        if not finite:
            return None
        return min(finite, key=lambda o: o.mean)

    def to_dict(self) -> dict:
        best = self.best
        return {
            "k": self.k,
            "trials": self.trials,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "best_rtg": best.rtg if best else None,
            "best_mean": best.mean if best else float("nan"),
        }


def default_bench_command() -> list[str]:
    """The benchmark CLI: the console script if on PATH, else module form."""
    script = shutil.which("qgtbench")
    if script:
        return [script]
    return [sys.executable, "-m", "qgtbench"]


def _parse_report(stdout: str, command: list[str]) -> dict:
    for line in reversed(stdout.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            break
        if isinstance(obj, dict):
            return obj
        break
    raise EvaluationError(
        f"no JSON report in output of {shlex.join(command)}: {stdout[-500:]!r}"
    )


def evaluate(
    checkpoint_dir: str | Path,
    *,
    trials: int = 1000,
    seed: int = 0,
    rtg_values: list[int] | None = None,
    bench_cmd: list[str] | None = None,
    agent_timeout: float = 60.0,
    run_timeout: float = 1800.0,
) -> EvalReport:
    """Run the RTG sweep for ``checkpoint_dir`` and return the full report."""
    checkpoint_dir = Path(checkpoint_dir)
    _, config = load_checkpoint(checkpoint_dir)
    if rtg_values is None:
        rtg_values = list(range(-1, -config.context_steps - 1, -1))
    if not rtg_values:
        raise EvaluationError("rtg_values must not be empty")
    bench = list(bench_cmd) if bench_cmd else default_bench_command()
    agent_cmd = shlex.join(
        [sys.executable, "-m", "dtagent", "serve", "--checkpoint", str(checkpoint_dir)]
    )

    outcomes = []
    for rtg in rtg_values:
        command = bench + [
            "bench",
            "--k",
            str(config.k),
            "--strategy",
            "external",
            "--agent-cmd",
            agent_cmd,
            "--agent-rtg",
            str(rtg),
            "--agent-timeout",
            str(agent_timeout),
            "--trials",
            str(trials),
            "--seed",
            str(seed),
            "--json",
        ]
        try:
            proc = subprocess.run(
                command, capture_output=True, text=True, timeout=run_timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EvaluationError(f"benchmark run failed: {exc}") from exc
        # exit 1 means a degraded report, which is still a report
        if proc.returncode not in (0, 1):
            raise EvaluationError(
                f"{shlex.join(command)} exited {proc.returncode}: {proc.stderr[-500:]}"
            )
        report = _parse_report(proc.stdout, command)
        try:
            outcomes.append(
                RtgOutcome(
                    rtg=rtg,
                    mean=float(report["mean_queries"]),
                    stddev=float(report["stddev"]),
                    ci95=float(report["ci95"]),
                    solve_rate=float(report["solve_rate"]),
                    failures=int(report["failures"]),
                    degraded=bool(report["degraded"]),
                    trials=int(report["trials"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(f"unexpected report shape: {exc}: {report}") from exc
    return EvalReport(k=config.k, trials=trials, outcomes=tuple(outcomes))
