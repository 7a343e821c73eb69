"""Benchmarks and reference bounds for query-count comparisons.

Two protocols: *per-stage* runs standalone reduced instances (bounds from
the occupancy model, hidden counts from even splits) and reports the mean
episode length; *end-to-end* runs the full splitting driver on random
incidence vectors and reports total queries with a per-stage breakdown.

Each trial seeds its own generator from ``(seed, trial_index)`` and all
aggregation is integer-exact, so reports do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bridge import ExternalStrategy, ProtocolError
from .core import random_incidence
from .dataset import reduce_bounds, sample_standalone_bounds, sample_standalone_hidden
from .splitting import SolveConfig, max_stages, solve_qgt
from .strategies import Strategy, make_strategy, run_episode

__all__ = [
    "bound_m0",
    "bound_adaptive",
    "per_stage_lower_bound",
    "baseline_per_stage",
    "bounds_row",
    "BenchReport",
    "bench_per_stage",
    "bench_end_to_end",
    "default_episode_cap",
]


def bound_m0(n: int, k: int) -> float:
    """Non-adaptive information bound ``(2k / log2 k) * log2(n / k)``."""
    if k < 2:
        raise ValueError(f"bound undefined for k < 2 (log2 k vanishes), got k={k}")
    if n <= k:
        raise ValueError(f"need n > k, got n={n}, k={k}")
    return (2 * k / math.log2(k)) * math.log2(n / k)


def bound_adaptive(n: int, k: int) -> float:
    """Adaptive variant: half of :func:`bound_m0`."""
    return bound_m0(n, k) / 2


def per_stage_lower_bound(k: int) -> float:
    """Information floor per halving stage: ``k / log2(k + 1)``."""
    if k < 1:
        raise ValueError(f"need k >= 1, got k={k}")
    return k / math.log2(k + 1)


def baseline_per_stage(k: int) -> float:
    """Classic deterministic-scheme cost per stage: twice the floor."""
    return 2 * per_stage_lower_bound(k)


def bounds_row(k: int, n: int | None = None) -> dict[str, float | None]:
    """The reference-bound columns reports carry alongside measurements."""
    row: dict[str, float | None] = {
        "m0": None,
        "adaptive_lb": None,
        "per_stage_lb": per_stage_lower_bound(k),
        "baseline": baseline_per_stage(k),
    }
    if n is not None and k >= 2 and n > k:
        row["m0"] = bound_m0(n, k)
        row["adaptive_lb"] = bound_adaptive(n, k)
    return row


def default_episode_cap(k: int) -> int:
    """Step cap generous enough that even random querying finishes."""
    return max(8 * k, 24)


@dataclass(frozen=True)
class BenchReport:
    """Aggregated measurement plus the matching reference bounds."""

    strategy: str
    k: int
    n: int | None
    trials: int
    mean_queries: float
    stddev: float
    ci95: float
    solve_rate: float
    failures: int
    degraded: bool
    per_stage_means: tuple[float, ...] | None
    bounds: dict

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "k": self.k,
            "n": self.n,
            "trials": self.trials,
            "mean_queries": self.mean_queries,
            "stddev": self.stddev,
            "ci95": self.ci95,
            "solve_rate": self.solve_rate,
            "failures": self.failures,
            "degraded": self.degraded,
            "per_stage_means": list(self.per_stage_means)
            if self.per_stage_means is not None
            else None,
            "bounds": dict(self.bounds),
        }


def _trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _resolve_strategy(strategy: Strategy | str) -> Strategy:
    return make_strategy(strategy) if isinstance(strategy, str) else strategy


@dataclass
class _Moments:
    """Integer-exact accumulator, mergeable across workers in any order."""

    count: int = 0
    total: int = 0
    total_sq: int = 0
    solved: int = 0
    failures: int = 0

    def add(self, length: int, solved: bool) -> None:
        self.count += 1
        self.total += length
        self.total_sq += length * length
        self.solved += solved

    def merge(self, other: "_Moments") -> None:
        self.count += other.count
        self.total += other.total
        self.total_sq += other.total_sq
        self.solved += other.solved
        self.failures += other.failures

    def summary(self) -> tuple[float, float, float]:
        if self.count == 0:
            return float("nan"), float("nan"), float("nan")
        mean = self.total / self.count
        if self.count < 2:
            return mean, 0.0, 0.0
        var = (self.total_sq - self.total * self.total / self.count) / (self.count - 1)
        std = math.sqrt(max(var, 0.0))
        return mean, std, 1.96 * std / math.sqrt(self.count)


def _per_stage_chunk(args) -> _Moments:
    name, kwargs, k, seed, lo, hi, max_steps = args
    strategy = make_strategy(name, **kwargs)
    moments = _Moments()
    for i in range(lo, hi):
        rng = _trial_rng(seed, i)
        _run_per_stage_trial(k, strategy, rng, max_steps, moments)
    return moments


def _run_per_stage_trial(
    k: int,
    strategy: Strategy,
    rng: np.random.Generator,
    max_steps: int,
    moments: _Moments,
) -> None:
    padded = sample_standalone_bounds(k, rng)
    active, positions = reduce_bounds(padded)
    hidden = sample_standalone_hidden(active, rng)
    if isinstance(strategy, ExternalStrategy):
        strategy.set_instance(positions)
    try:
        trajectory = run_episode(active, hidden, strategy, rng, max_steps=max_steps)
    except ProtocolError:
        moments.failures += 1
        return
    moments.add(trajectory.num_queries, trajectory.solved)


def bench_per_stage(
    k: int,
    strategy: Strategy | str,
    trials: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    max_steps: int | None = None,
) -> BenchReport:
    """Mean query count over standalone reduced instances of width ``k``."""
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    cap = max_steps if max_steps is not None else default_episode_cap(k)
    moments = _Moments()
    if workers > 1:
        if not isinstance(strategy, str):
            raise ValueError("parallel benchmarking needs a strategy name, not an instance")
        chunk_edges = np.linspace(0, trials, workers + 1, dtype=int)
        jobs = [
            (strategy, {}, k, seed, int(lo), int(hi), cap)
            for lo, hi in zip(chunk_edges, chunk_edges[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_per_stage_chunk, jobs):
                moments.merge(part)
        resolved_name = strategy
    else:
        resolved = _resolve_strategy(strategy)
        try:
            for i in range(trials):
                _run_per_stage_trial(k, resolved, _trial_rng(seed, i), cap, moments)
        finally:
            resolved.close()
        resolved_name = resolved.name
    mean, std, ci = moments.summary()
    failure_rate = moments.failures / trials
    return BenchReport(
        strategy=resolved_name,
        k=k,
        n=None,
        trials=trials,
        mean_queries=mean,
        stddev=std,
        ci95=ci,
        solve_rate=moments.solved / trials,
        failures=moments.failures,
        degraded=failure_rate > 0.01,
        per_stage_means=None,
        bounds=bounds_row(k),
    )


def _end_to_end_chunk(args) -> tuple[_Moments, np.ndarray]:
    name, kwargs, n, k, seed, lo, hi, config = args
    strategy = make_strategy(name, **kwargs)
    moments = _Moments()
    stage_totals = np.zeros(max_stages(n, k), dtype=np.int64)
    for i in range(lo, hi):
        _run_end_to_end_trial(n, k, strategy, _trial_rng(seed, i), config, moments, stage_totals)
    return moments, stage_totals


def _run_end_to_end_trial(
    n: int,
    k: int,
    strategy: Strategy,
    rng: np.random.Generator,
    config: SolveConfig,
    moments: _Moments,
    stage_totals: np.ndarray,
) -> None:
    x = random_incidence(n, k, rng)
    try:
        _, log = solve_qgt(x, strategy, rng, config=config)
    except ProtocolError:
        moments.failures += 1
        return
    moments.add(log.total, True)
    for j, q in enumerate(log.per_stage):
        stage_totals[j] += q


def bench_end_to_end(
    n: int,
    k: int,
    strategy: Strategy | str,
    trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    config: SolveConfig | None = None,
) -> BenchReport:
    """Total query count of the full driver on uniform k-sparse instances."""
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    if n < k or n / k < 1:
        raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")
    config = config or SolveConfig()
    moments = _Moments()
    stage_totals = np.zeros(max_stages(n, k), dtype=np.int64)
    if workers > 1:
        if not isinstance(strategy, str):
            raise ValueError("parallel benchmarking needs a strategy name, not an instance")
        chunk_edges = np.linspace(0, trials, workers + 1, dtype=int)
        jobs = [
            (strategy, {}, n, k, seed, int(lo), int(hi), config)
            for lo, hi in zip(chunk_edges, chunk_edges[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part, stages in pool.map(_end_to_end_chunk, jobs):
                moments.merge(part)
                stage_totals += stages
        resolved_name = strategy
    else:
        resolved = _resolve_strategy(strategy)
        try:
            for i in range(trials):
                _run_end_to_end_trial(
                    n, k, resolved, _trial_rng(seed, i), config, moments, stage_totals
                )
        finally:
            resolved.close()
        resolved_name = resolved.name
    mean, std, ci = moments.summary()
    completed = max(moments.count, 1)
    failure_rate = moments.failures / trials
    return BenchReport(
        strategy=resolved_name,
        k=k,
        n=n,
        trials=trials,
        mean_queries=mean,
        stddev=std,
        ci95=ci,
        solve_rate=moments.solved / trials,
        failures=moments.failures,
        degraded=failure_rate > 0.01,
        per_stage_means=tuple(float(t) / completed for t in stage_totals),
        bounds=bounds_row(k, n),
    )
