"""Exhaustive feasibility oracle over bounded integer boxes.

The reduced problems this package deals with are tiny (dimension <= 8,
bounds summing to at most 8), so instead of an ILP solver we enumerate the
whole box ``prod(u[i] + 1)`` once and filter it by the query history.  That
gives us more than feasibility checks for free: the exact feasible set, its
answer distribution under any mask, and its covariance structure.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import (
    BoundsVector,
    BoxTooLargeError,
    DimensionMismatchError,
    InconsistentHistoryError,
    QueryRecord,
    ReducedInstance,
)

__all__ = [
    "DEFAULT_BOX_CAP",
    "FeasibleSet",
    "FeasibilityOracle",
    "full_box",
    "enumerate_feasible",
    "is_identified",
    "answer_histogram",
    "centered_covariance",
    "gram_matrix",
]

# Enumeration guard: boxes beyond ~1M vectors are outside this package's
# intended regime and would silently eat memory.
DEFAULT_BOX_CAP = 1 << 20


class FeasibleSet:
    """All integer vectors consistent with bounds and a query history.

    Rows of ``vectors`` are kept in lexicographic order (first coordinate
    most significant), which every downstream tie-break relies on.
    """

    __slots__ = ("vectors",)

    def __init__(self, vectors: np.ndarray):
        self.vectors = vectors

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def refine(self, record: QueryRecord) -> "FeasibleSet":
        """Drop every vector whose answer to ``record.mask`` differs."""
        if record.d != self.dimension:
            raise DimensionMismatchError(
                f"mask has {record.d} coordinates, feasible set has {self.dimension}"
            )
        mask = np.asarray(record.mask, dtype=np.int64)
        kept = self.vectors[self.vectors @ mask == record.answer]
        if kept.shape[0] == 0:
            raise InconsistentHistoryError(
                f"no vector answers {record.answer} under mask {record.mask}"
            )
        return FeasibleSet(kept)

    def contains(self, v: Sequence[int]) -> bool:
        arr = np.asarray(tuple(v), dtype=np.int64)
        if arr.shape != (self.dimension,):
            return False
        return bool((self.vectors == arr).all(axis=1).any())

    def as_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(x) for x in row) for row in self.vectors]

    def single(self) -> tuple[int, ...]:
        """The unique remaining vector; only valid once identified."""
        if len(self) != 1:
            raise InconsistentHistoryError(
                f"feasible set has {len(self)} elements, not a singleton"
            )
        return tuple(int(x) for x in self.vectors[0])


# Full boxes are re-enumerated constantly (one per episode), so share the
# immutable vector arrays across calls.
_BOX_CACHE: dict[tuple[int, ...], np.ndarray] = {}


def full_box(bounds: BoundsVector, cap: int = DEFAULT_BOX_CAP) -> FeasibleSet:
    """Enumerate the whole box ``0..u[0] x ... x 0..u[d-1]`` in lex order."""
    size = bounds.box_size()
    if size > cap:
        raise BoxTooLargeError(f"box has {size} vectors, cap is {cap}")
    vectors = _BOX_CACHE.get(bounds.u)
    if vectors is None:
        axes = [np.arange(b + 1, dtype=np.int64) for b in bounds.u]
        grid = np.meshgrid(*axes, indexing="ij")
        vectors = np.stack([g.ravel() for g in grid], axis=-1)
        vectors.setflags(write=False)
        if len(_BOX_CACHE) < 10_000:
            _BOX_CACHE[bounds.u] = vectors
    return FeasibleSet(vectors)


def enumerate_feasible(instance: ReducedInstance, cap: int = DEFAULT_BOX_CAP) -> FeasibleSet:
    """Feasible set of an instance, built fresh from its full history."""
    fs = full_box(instance.bounds, cap=cap)
    for record in instance.history:
        fs = fs.refine(record)
    return fs


def is_identified(fs: FeasibleSet) -> bool:
    return len(fs) == 1


def answer_histogram(fs: FeasibleSet, mask: Sequence[int]) -> dict[int, float]:
    """Distribution of the answer to ``mask`` when the truth is uniform on ``fs``."""
    mask_arr = np.asarray(tuple(mask), dtype=np.int64)
    if mask_arr.shape != (fs.dimension,):
        raise DimensionMismatchError(
            f"mask has {mask_arr.size} coordinates, feasible set has {fs.dimension}"
        )
    answers = fs.vectors @ mask_arr
    values, counts = np.unique(answers, return_counts=True)
    m = len(fs)
    return {int(v): float(c) / m for v, c in zip(values, counts)}


def centered_covariance(fs: FeasibleSet) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix of the uniform law on ``fs``."""
    x = fs.vectors.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / len(fs)
    return mean, cov


def gram_matrix(fs: FeasibleSet) -> np.ndarray:
    """Raw second-moment matrix ``V^T V / m`` (uncentered).

    Kept as an alternative scoring matrix for the covariance strategy; unlike
    the centered covariance it does not vanish on singletons, so maximizing
    it rewards large answers rather than informative ones.
    """
    x = fs.vectors.astype(np.float64)
    return x.T @ x / len(fs)


class FeasibilityOracle:
    """Stateful wrapper that refines the feasible set one query at a time.

    Equivalent to re-enumerating from scratch after every query (tested), but
    each update only filters the current survivors.
    """

    __slots__ = ("bounds", "_fs", "_history")

    def __init__(self, bounds: BoundsVector, cap: int = DEFAULT_BOX_CAP):
        self.bounds = bounds
        self._fs = full_box(bounds, cap=cap)
        self._history: list[QueryRecord] = []

    @property
    def current(self) -> FeasibleSet:
        return self._fs

    @property
    def history(self) -> tuple[QueryRecord, ...]:
        return tuple(self._history)

    @property
    def identified(self) -> bool:
        return len(self._fs) == 1

    def update(self, record: QueryRecord) -> FeasibleSet:
        self._fs = self._fs.refine(record)
        self._history.append(record)
        return self._fs
