"""Query-selection strategies and the standalone episode runner.

A strategy proposes one binary mask per round; the runner answers it from
the hidden vector, refines the feasible set, and stops once a single
candidate remains.  The two greedy experts score every nonzero mask against
the current feasible set (answer variance for one, answer entropy for the
other) and break score ties by picking the lexicographically smallest mask,
so their decisions are fully deterministic given the query history.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    AlreadyIdentifiedError,
    BoundsVector,
    CorruptedStateError,
    HiddenVector,
    QueryRecord,
    inner_answer,
)
from .oracle import FeasibilityOracle, FeasibleSet, centered_covariance, gram_matrix

__all__ = [
    "TrajectoryStep",
    "Trajectory",
    "Strategy",
    "RandomStrategy",
    "CovarianceStrategy",
    "EntropyStrategy",
    "make_strategy",
    "STRATEGY_NAMES",
    "mask_matrix",
    "random_query",
    "covariance_query",
    "entropy_query",
    "run_episode",
]

_MASK_CACHE: dict[int, np.ndarray] = {}


def mask_matrix(d: int) -> np.ndarray:
    """All ``2^d - 1`` nonzero binary masks of length ``d``, lex ordered.

    Row ``c - 1`` holds the binary digits of ``c`` with coordinate 0 as the
    most significant bit, so row order coincides with lexicographic order.
    """
    cached = _MASK_CACHE.get(d)
    if cached is None:
        if d < 1:
            raise ValueError(f"need d >= 1, got {d}")
        codes = np.arange(1, 1 << d, dtype=np.int64)[:, None]
        shifts = np.arange(d - 1, -1, -1, dtype=np.int64)
        cached = (codes >> shifts) & 1
        cached.setflags(write=False)
        _MASK_CACHE[d] = cached
    return cached


_MASK_TUPLES: dict[int, list[tuple[int, ...]]] = {}


def _mask_tuples(d: int) -> list[tuple[int, ...]]:
    """Tuple form of every mask of length ``d``, indexed by its code 0..2^d-1."""
    cached = _MASK_TUPLES.get(d)
    if cached is None:
        cached = [(0,) * d] + [tuple(int(b) for b in row) for row in mask_matrix(d)]
        _MASK_TUPLES[d] = cached
    return cached


def random_query(d: int, rng: np.random.Generator, include_zero: bool = True) -> tuple[int, ...]:
    """Uniform random binary mask of length ``d``.

    With ``include_zero`` (the default) all ``2^d`` masks are equiprobable,
    including the uninformative all-zeros mask; without it, the ``2^d - 1``
    nonzero masks are equiprobable.
    """
    lo = 0 if include_zero else 1
    return _mask_tuples(d)[int(rng.integers(lo, 1 << d))]


def _lex_argmax(masks: np.ndarray, scores: np.ndarray) -> tuple[int, ...]:
    # np.argmax returns the first maximizer; rows are in lex order already
    # (row i of the matrix is code i+1 in the tuple table).
    return _mask_tuples(masks.shape[1])[int(np.argmax(scores)) + 1]


def covariance_query(fs: FeasibleSet, mode: str = "centered") -> tuple[int, ...]:
    """Mask maximizing the quadratic form ``m^T C m`` over nonzero masks.

    With the default centered covariance, ``m^T C m`` is exactly the variance
    of the answer under a uniform draw from the feasible set, so the chosen
    query always has positive variance while more than one candidate remains.
    The uncentered ``gram`` mode is kept for comparison only: its score stays
    positive even for queries whose answer is already determined.
    """
    if len(fs) <= 1:
        raise AlreadyIdentifiedError("feasible set is already a singleton")
    masks = mask_matrix(fs.dimension)
    if mode == "centered":
        _, matrix = centered_covariance(fs)
    elif mode == "gram":
        matrix = gram_matrix(fs)
    else:
        raise ValueError(f"unknown covariance mode {mode!r}")
    scores = np.einsum("md,md->m", masks @ matrix, masks)
    return _lex_argmax(masks, scores)


def entropy_query(fs: FeasibleSet) -> tuple[int, ...]:
    """Mask maximizing the Shannon entropy (bits) of its answer distribution.

    Entropies are computed from sorted per-answer counts so that masks with
    identical answer-count multisets get bit-identical scores, keeping the
    lexicographic tie-break exact.
    """
    if len(fs) <= 1:
        raise AlreadyIdentifiedError("feasible set is already a singleton")
    masks = mask_matrix(fs.dimension)
    m = len(fs)
    answers = fs.vectors @ masks.T  # (m, num_masks)
    num_masks = masks.shape[0]
    width = int(answers.max()) + 1
    offsets = np.arange(num_masks, dtype=np.int64) * width
    counts = np.bincount(
        (answers + offsets).ravel(), minlength=num_masks * width
    ).reshape(num_masks, width)
    counts = np.sort(counts, axis=1)[:, ::-1].astype(np.float64)
    logs = np.zeros_like(counts)
    np.log2(counts, out=logs, where=counts > 0)
    scores = np.log2(m) - (counts * logs).sum(axis=1) / m
    return _lex_argmax(masks, scores)


@dataclass(frozen=True)
class TrajectoryStep:
    """One decision point: return-to-go, observed state, chosen mask."""

    rtg: int
    state: int
    action: tuple[int, ...]


@dataclass(frozen=True)
class Trajectory:
    """A complete standalone episode on a reduced instance."""

    bounds: BoundsVector
    steps: tuple[TrajectoryStep, ...]
    target: HiddenVector
    solved: bool

    @property
    def num_queries(self) -> int:
        return len(self.steps)


class Strategy:
    """Interface every query policy implements.

    ``begin``/``observe``/``end_episode`` are lifecycle hooks that only
    stateful policies (e.g. ones backed by an external process) need; the
    in-process policies are pure functions of the feasible set.
    """

    name = "strategy"

    def begin(self, bounds: BoundsVector, rng: np.random.Generator) -> None:
        pass

    def propose(
        self,
        fs: FeasibleSet,
        bounds: BoundsVector,
        history: Sequence[QueryRecord],
        rng: np.random.Generator,
    ) -> tuple[int, ...]:
        raise NotImplementedError

    def observe(self, answer: int, identified: bool) -> None:
        pass

    def end_episode(self, solved: bool) -> None:
        pass

    def close(self) -> None:
        pass


class RandomStrategy(Strategy):
    """Uniform random masks, independent of everything seen so far."""

    name = "random"

    def __init__(self, include_zero: bool = True):
        self.include_zero = include_zero

    def propose(self, fs, bounds, history, rng) -> tuple[int, ...]:
        return random_query(fs.dimension, rng, include_zero=self.include_zero)


class _MemoizedExpert(Strategy):
    """Deterministic policy cached on the feasible-set contents.

    Both experts are pure functions of the feasible set, so distinct
    histories reaching the same survivor set share one cached decision.
    """

    def __init__(self, memoize: bool = True):
        self.memoize = memoize
        self._cache: dict[tuple, tuple[int, ...]] = {}

    def _decide(self, fs: FeasibleSet) -> tuple[int, ...]:
        raise NotImplementedError

    def propose(self, fs, bounds, history, rng) -> tuple[int, ...]:
        if not self.memoize:
            return self._decide(fs)
        key = (fs.vectors.shape, fs.vectors.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = self._decide(fs)
        return hit


class CovarianceStrategy(_MemoizedExpert):
    """Greedy maximizer of the answer variance (quadratic form in the mask)."""

    name = "covariance"

    def __init__(self, mode: str = "centered", memoize: bool = True):
        super().__init__(memoize=memoize)
        if mode not in ("centered", "gram"):
            raise ValueError(f"unknown covariance mode {mode!r}")
        self.mode = mode

    def _decide(self, fs: FeasibleSet) -> tuple[int, ...]:
        return covariance_query(fs, mode=self.mode)


class EntropyStrategy(_MemoizedExpert):
    """Greedy maximizer of the answer entropy."""

    name = "entropy"

    def _decide(self, fs: FeasibleSet) -> tuple[int, ...]:
        return entropy_query(fs)


STRATEGY_NAMES = ("random", "covariance", "entropy")


def make_strategy(name: str, **kwargs) -> Strategy:
    """Build an in-process strategy by name (``random``/``covariance``/``entropy``)."""
    if name == "random":
        return RandomStrategy(**kwargs)
    if name == "covariance":
        return CovarianceStrategy(**kwargs)
    if name == "entropy":
        return EntropyStrategy(**kwargs)
    raise ValueError(f"unknown strategy {name!r} (expected one of {STRATEGY_NAMES})")


def run_episode(
    bounds: BoundsVector,
    hidden: HiddenVector,
    strategy: Strategy,
    rng: np.random.Generator,
    max_steps: int | None = None,
) -> Trajectory:
    """Drive one standalone episode until identification or ``max_steps``.

    The first observed state is the total count ``sum(bounds)``; afterwards
    the state is the previous query's answer.  Returns-to-go are assigned
    after the fact as ``-T .. -1`` for a ``T``-query episode (reward ``-1``
    per query until identification).
    """
    hidden.check_bounds(bounds)
    if max_steps is None:
        max_steps = 2 * max(bounds.total, 1)
    oracle = FeasibilityOracle(bounds)
    state = bounds.total
    states: list[int] = []
    records: list[QueryRecord] = []
    if not oracle.identified:
        strategy.begin(bounds, rng)
    while not oracle.identified and len(records) < max_steps:
        mask = strategy.propose(oracle.current, bounds, records, rng)
        answer = inner_answer(hidden, mask)
        record = QueryRecord(mask, answer)
        oracle.update(record)
        states.append(state)
        records.append(record)
        state = answer
        strategy.observe(answer, oracle.identified)
    solved = oracle.identified
    if solved and oracle.current.single() != hidden.v:
        raise CorruptedStateError(
            f"identified {oracle.current.single()} but the hidden vector is {hidden.v}"
        )
    strategy.end_episode(solved)
    total = len(records)
    steps = tuple(
        TrajectoryStep(rtg=i - total, state=states[i], action=records[i].mask)
        for i in range(total)
    )
    return Trajectory(bounds=bounds, steps=steps, target=hidden, solved=solved)
