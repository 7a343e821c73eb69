"""Core types and count-query arithmetic for pooled testing simulations.

Everything downstream (oracle, strategies, splitting driver) is built on the
small value types defined here: binary incidence vectors over the full item
universe, per-coordinate upper bounds for the reduced integer recovery
problem, and query records pairing a binary mask with its integer answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "QgtError",
    "DimensionMismatchError",
    "InfeasibleInstanceError",
    "InconsistentHistoryError",
    "AlreadyIdentifiedError",
    "CorruptedStateError",
    "BoxTooLargeError",
    "BoundsVector",
    "QueryRecord",
    "ReducedInstance",
    "HiddenVector",
    "IncidenceVector",
    "inner_answer",
    "sample_hidden_split",
    "random_incidence",
]


class QgtError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(QgtError):
    """Vectors of incompatible lengths were combined."""


class InfeasibleInstanceError(QgtError):
    """A hidden vector or instance violates its declared bounds."""


class InconsistentHistoryError(QgtError):
    """A query history admits no solution at all."""


class AlreadyIdentifiedError(QgtError):
    """A query was requested for an already-singleton feasible set."""


class CorruptedStateError(QgtError):
    """An internal invariant (count conservation, recovery match) failed."""


class BoxTooLargeError(QgtError):
    """The bounded integer box exceeds the exhaustive enumeration cap."""


def _as_int_tuple(values: Iterable[int], what: str) -> tuple[int, ...]:
    out = []
    for v in values:
        iv = int(v)
        if iv != v:
            raise ValueError(f"{what} entries must be integers, got {v!r}")
        out.append(iv)
    return tuple(out)


@dataclass(frozen=True)
class BoundsVector:
    """Per-coordinate upper bounds ``u`` for a reduced recovery problem.

    Coordinate ``i`` of the hidden vector ranges over ``0..u[i]``.  Bounds of
    zero are allowed (the coordinate is then forced) but the vector itself
    must be non-empty.
    """

    u: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", _as_int_tuple(self.u, "bounds"))
        if len(self.u) == 0:
            raise ValueError("bounds vector must have at least one coordinate")
        if any(b < 0 for b in self.u):
            raise ValueError(f"bounds must be non-negative, got {self.u}")

    @property
    def d(self) -> int:
        return len(self.u)

    @property
    def total(self) -> int:
        """Sum of the bounds (the number of defectives being located)."""
        return sum(self.u)

    def as_array(self) -> np.ndarray:
        """Read-only ndarray view of the bounds, built once per instance."""
        cached = getattr(self, "_arr", None)
        if cached is None:
            cached = np.asarray(self.u, dtype=np.int64)
            cached.setflags(write=False)
            object.__setattr__(self, "_arr", cached)
        return cached

    def box_size(self) -> int:
        """Number of integer vectors in the box ``prod(u[i] + 1)``."""
        size = 1
        for b in self.u:
            size *= b + 1
        return size


@dataclass(frozen=True)
class QueryRecord:
    """A single pooled query: binary mask and the exact count it returned."""

    mask: tuple[int, ...]
    answer: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mask", _as_int_tuple(self.mask, "mask"))
        object.__setattr__(self, "answer", int(self.answer))
        if any(b not in (0, 1) for b in self.mask):
            raise ValueError(f"mask must be binary, got {self.mask}")
        if self.answer < 0:
            raise ValueError(f"answer must be non-negative, got {self.answer}")

    @property
    def d(self) -> int:
        return len(self.mask)


@dataclass(frozen=True)
class ReducedInstance:
    """Bounds plus the query history accumulated so far."""

    bounds: BoundsVector
    history: tuple[QueryRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        for rec in self.history:
            if rec.d != self.bounds.d:
                raise DimensionMismatchError(
                    f"query mask has {rec.d} coordinates, bounds have {self.bounds.d}"
                )
            ceiling = sum(b for b, m in zip(self.bounds.u, rec.mask) if m)
            if rec.answer > ceiling:
                raise InfeasibleInstanceError(
                    f"answer {rec.answer} exceeds masked bound sum {ceiling}"
                )

    def extended(self, record: QueryRecord) -> "ReducedInstance":
        return ReducedInstance(self.bounds, self.history + (record,))


@dataclass(frozen=True)
class HiddenVector:
    """The ground-truth integer vector a simulation answers queries from."""

    v: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", _as_int_tuple(self.v, "hidden vector"))
        if any(x < 0 for x in self.v):
            raise ValueError(f"hidden vector must be non-negative, got {self.v}")

    @property
    def d(self) -> int:
        return len(self.v)

    def check_bounds(self, bounds: BoundsVector) -> None:
        if self.d != bounds.d:
            raise DimensionMismatchError(
                f"hidden vector has {self.d} coordinates, bounds have {bounds.d}"
            )
        if any(x > b for x, b in zip(self.v, bounds.u)):
            raise InfeasibleInstanceError(
                f"hidden vector {self.v} violates bounds {bounds.u}"
            )


class IncidenceVector:
    """Binary membership vector over the full universe of ``n`` items."""

    __slots__ = ("bits", "_k")

    def __init__(self, bits: Sequence[int] | np.ndarray):
        arr = np.asarray(bits, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("incidence vector must be a non-empty 1-d sequence")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("incidence vector must be binary")
        arr = arr.copy()
        arr.setflags(write=False)
        self.bits = arr
        self._k = int(arr.sum())

    @property
    def n(self) -> int:
        return int(self.bits.size)

    @property
    def k(self) -> int:
        return self._k

    @classmethod
    def from_indices(cls, n: int, indices: Iterable[int]) -> "IncidenceVector":
        arr = np.zeros(n, dtype=np.int64)
        arr[list(indices)] = 1
        return cls(arr)

    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IncidenceVector):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def __repr__(self) -> str:
        return f"IncidenceVector(n={self.n}, k={self.k})"


def inner_answer(hidden: HiddenVector | Sequence[int], mask: Sequence[int]) -> int:
    """Exact answer to a pooled count query: the inner product ``<hidden, mask>``."""
    values = hidden.v if isinstance(hidden, HiddenVector) else tuple(hidden)
    if len(values) != len(mask):
        raise DimensionMismatchError(
            f"hidden vector has {len(values)} coordinates, mask has {len(mask)}"
        )
    return int(sum(v * m for v, m in zip(values, mask)))


def sample_hidden_split(
    bounds: BoundsVector,
    sizes: Sequence[int],
    left_sizes: Sequence[int],
    rng: np.random.Generator,
) -> HiddenVector:
    """Sample how many of each group's defectives land in its left half.

    Group ``i`` holds ``bounds.u[i]`` defectives spread uniformly over
    ``sizes[i]`` items; the left half keeps ``left_sizes[i]`` of those items.
    The left-half count is then hypergeometric, which is exactly how the
    splitting driver's sub-problems arise.
    """
    if len(sizes) != bounds.d or len(left_sizes) != bounds.d:
        raise DimensionMismatchError(
            f"expected {bounds.d} group sizes, got {len(sizes)}/{len(left_sizes)}"
        )
    u = np.asarray(bounds.u, dtype=np.int64)
    size = np.asarray(sizes, dtype=np.int64)
    left = np.asarray(left_sizes, dtype=np.int64)
    if (u > size).any():
        raise InfeasibleInstanceError(f"bounds {bounds.u} exceed group sizes {tuple(sizes)}")
    if (left < 1).any() or (left > size).any():
        raise ValueError("left sizes must satisfy 1 <= left <= size")
    counts = rng.hypergeometric(ngood=u, nbad=size - u, nsample=left)
    return HiddenVector(tuple(int(c) for c in np.atleast_1d(counts)))


def random_incidence(n: int, k: int, rng: np.random.Generator) -> IncidenceVector:
    """Uniform random binary vector of length ``n`` with exactly ``k`` ones."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return IncidenceVector.from_indices(n, rng.choice(n, size=k, replace=False))
