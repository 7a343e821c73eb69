"""End-to-end solver: locate all defectives by recursive group halving.

The driver first measures each of ``k`` initial groups (one query apiece),
then repeatedly halves every unresolved group.  Each halving stage is a
small integer recovery problem over the *left* halves, answered by real
pooled queries over the union of the selected left halves; right-half
counts follow by subtraction.  Groups whose count hits zero drop out, so
the reduced dimension never exceeds ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    BoundsVector,
    CorruptedStateError,
    HiddenVector,
    IncidenceVector,
)
from .strategies import Strategy, Trajectory, run_episode

__all__ = [
    "Group",
    "GroupState",
    "QueryLog",
    "SolveConfig",
    "StageReport",
    "initial_partition",
    "measure_groups",
    "with_counts",
    "run_stage",
    "solve_qgt",
    "max_stages",
]


@dataclass(frozen=True)
class Group:
    """Contiguous item range ``[start, stop)`` holding ``count`` defectives."""

    start: int
    stop: int
    count: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.stop:
            raise ValueError(f"invalid group range [{self.start}, {self.stop})")
        if not 0 <= self.count <= self.size:
            raise ValueError(
                f"group of size {self.size} cannot hold {self.count} defectives"
            )

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def mid(self) -> int:
        """Split point: the left half keeps ``ceil(size / 2)`` items."""
        return self.start + (self.size + 1) // 2


@dataclass(frozen=True)
class GroupState:
    """Disjoint groups still in play plus the current stage index."""

    groups: tuple[Group, ...]
    stage: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        prev_stop = -1
        for g in sorted(self.groups, key=lambda g: g.start):
            if g.start < prev_stop:
                raise ValueError("groups overlap")
            prev_stop = g.stop

    @property
    def total_count(self) -> int:
        return sum(g.count for g in self.groups)

    def largest_group(self) -> int:
        return max(g.size for g in self.groups) if self.groups else 0


@dataclass(frozen=True)
class QueryLog:
    """Query accounting: ``k`` initial measurements plus one entry per stage."""

    initial_queries: int
    per_stage: tuple[int, ...]

    @property
    def total(self) -> int:
        return self.initial_queries + sum(self.per_stage)

    @property
    def num_stages(self) -> int:
        return len(self.per_stage)


@dataclass(frozen=True)
class SolveConfig:
    """Driver knobs.

    ``prune_saturated`` skips querying groups whose count equals their size
    (their composition is already certain); off by default so the query
    accounting stays comparable across strategies.  ``permute`` shuffles the
    coordinate order of each stage instance.  ``stage_max_steps`` caps the
    queries per stage episode; the default cap is far beyond what even the
    random strategy needs, and exceeding it is treated as a driver bug.
    """

    prune_saturated: bool = False
    permute: bool = True
    stage_max_steps: int | None = None


@dataclass(frozen=True)
class StageReport:
    """What one stage did, for callbacks and audits.

    ``left_ranges[i]`` is the item range of the left half behind coordinate
    ``i`` of the stage instance (after permutation), so pooled answers can be
    re-checked directly against the incidence vector.
    """

    stage: int
    queried: tuple[Group, ...]
    pruned: tuple[Group, ...]
    left_ranges: tuple[tuple[int, int], ...]
    trajectory: Trajectory | None


def initial_partition(n: int, k: int) -> GroupState:
    """Split ``[0, n)`` into ``k`` contiguous groups with sizes differing by <= 1.

    Counts are zero placeholders until :func:`measure_groups` fills them in.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    base, extra = divmod(n, k)
    groups = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        groups.append(Group(start, start + size, 0))
        start += size
    return GroupState(tuple(groups), stage=0)


def measure_groups(x: IncidenceVector, state: GroupState) -> tuple[int, ...]:
    """One pooled query per group: the defective count inside each range."""
    if any(g.stop > x.n for g in state.groups):
        raise ValueError("group range exceeds the item universe")
    return tuple(int(x.bits[g.start : g.stop].sum()) for g in state.groups)


def with_counts(state: GroupState, counts: Sequence[int]) -> GroupState:
    """Attach measured counts, dropping groups that contain no defectives."""
    if len(counts) != len(state.groups):
        raise ValueError(f"expected {len(state.groups)} counts, got {len(counts)}")
    kept = tuple(
        Group(g.start, g.stop, int(c))
        for g, c in zip(state.groups, counts)
        if int(c) > 0
    )
    return GroupState(kept, stage=state.stage)


def _default_stage_cap(total: int) -> int:
    return 20 * max(total, 1) + 100


def run_stage(
    x: IncidenceVector,
    state: GroupState,
    strategy: Strategy,
    rng: np.random.Generator,
    config: SolveConfig | None = None,
) -> tuple[GroupState, int, StageReport]:
    """Halve every group of size >= 2, recovering all left-half counts.

    Saturated groups (count == size) are only queried when
    ``config.prune_saturated`` is off.  Returns the next state, the number
    of queries spent, and a :class:`StageReport`.
    """
    config = config or SolveConfig()
    if any(g.count < 1 for g in state.groups):
        raise CorruptedStateError("stage received a group with no defectives")
    splittable = [g for g in state.groups if g.size >= 2]
    if not splittable:
        raise ValueError("no group of size >= 2 to split")
    new_groups = [g for g in state.groups if g.size == 1]

    pruned: list[Group] = []
    to_query: list[Group] = []
    for g in splittable:
        if config.prune_saturated and g.count == g.size:
            pruned.append(g)
        else:
            to_query.append(g)
    for g in pruned:
        # Every item is defective, so both halves are fully determined.
        new_groups.append(Group(g.start, g.mid, g.mid - g.start))
        new_groups.append(Group(g.mid, g.stop, g.stop - g.mid))

    queries = 0
    trajectory: Trajectory | None = None
    ordered: list[Group] = []
    left_ranges: tuple[tuple[int, int], ...] = ()
    if to_query:
        order = np.arange(len(to_query))
        if config.permute:
            order = rng.permutation(len(to_query))
        ordered = [to_query[int(i)] for i in order]
        bounds = BoundsVector(tuple(g.count for g in ordered))
        truth = HiddenVector(
            tuple(int(x.bits[g.start : g.mid].sum()) for g in ordered)
        )
        left_ranges = tuple((g.start, g.mid) for g in ordered)
        cap = config.stage_max_steps or _default_stage_cap(bounds.total)
        trajectory = run_episode(bounds, truth, strategy, rng, max_steps=cap)
        if not trajectory.solved:
            raise CorruptedStateError(
                f"stage instance unsolved after {cap} queries"
            )
        queries = trajectory.num_queries
        for g, left_count in zip(ordered, truth.v):
            for child in (
                Group(g.start, g.mid, left_count),
                Group(g.mid, g.stop, g.count - left_count),
            ):
                if child.count > 0:
                    new_groups.append(child)

    new_groups.sort(key=lambda g: g.start)
    next_state = GroupState(tuple(new_groups), stage=state.stage + 1)
    if next_state.total_count != state.total_count:
        raise CorruptedStateError(
            f"defective count changed across a stage: "
            f"{state.total_count} -> {next_state.total_count}"
        )
    report = StageReport(
        stage=state.stage,
        queried=tuple(ordered),
        pruned=tuple(pruned),
        left_ranges=left_ranges,
        trajectory=trajectory,
    )
    return next_state, queries, report


def max_stages(n: int, k: int) -> int:
    """Upper bound on halving stages: ``ceil(log2(ceil(n / k)))``."""
    largest = -(-n // k)
    return max(0, (largest - 1).bit_length())


def solve_qgt(
    x: IncidenceVector,
    strategy: Strategy,
    rng: np.random.Generator,
    config: SolveConfig | None = None,
    on_stage: Callable[[StageReport], None] | None = None,
) -> tuple[IncidenceVector, QueryLog]:
    """Recover ``x`` exactly and account for every query spent."""
    config = config or SolveConfig()
    state = initial_partition(x.n, x.k)
    state = with_counts(state, measure_groups(x, state))
    per_stage: list[int] = []
    while any(g.size >= 2 for g in state.groups):
        state, queries, report = run_stage(x, state, strategy, rng, config)
        per_stage.append(queries)
        if on_stage is not None:
            on_stage(report)
    recovered = IncidenceVector.from_indices(x.n, [g.start for g in state.groups])
    if recovered != x:
        raise CorruptedStateError("recovered vector does not match the target")
    return recovered, QueryLog(initial_queries=x.k, per_stage=tuple(per_stage))
