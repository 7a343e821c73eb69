"""Offline trajectory datasets: generation, JSONL serialization, replay.

Records are standalone reduced-instance episodes padded back to a fixed
width ``k`` so a learned policy sees a constant action dimension: bounds
are occupancy counts of ``k`` defectives over ``k`` groups, zero-bound
coordinates are dropped for the solve and re-inserted (with zero action
bits) at their original positions on export.
"""

from __future__ import annotations

import gzip
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .core import (
    BoundsVector,
    HiddenVector,
    InconsistentHistoryError,
    QgtError,
    QueryRecord,
    inner_answer,
)
from .oracle import FeasibilityOracle
from .strategies import Strategy, Trajectory, TrajectoryStep, make_strategy, run_episode

__all__ = [
    "DatasetFormatError",
    "DatasetWriteError",
    "DatasetRecord",
    "DatasetSummary",
    "compute_rtg",
    "sample_standalone_bounds",
    "sample_standalone_hidden",
    "reduce_bounds",
    "pad_record",
    "generate_episode",
    "generate_dataset",
    "write_jsonl",
    "read_jsonl",
    "iter_jsonl",
    "replay_record",
]


class DatasetFormatError(QgtError):
    """A serialized record is malformed or fails its replay check."""


class DatasetWriteError(QgtError):
    """Writing to the sink failed; the message reports how many records made it."""


def compute_rtg(episode_length: int, final_reward: int = -1) -> list[int]:
    """Return-to-go per step for a cost of 1 per query.

    With the default ``final_reward=-1`` (the identifying query also costs
    its step) this is ``[-T, ..., -1]``; with ``final_reward=0`` it is
    ``[-(T-1), ..., 0]``.
    """
    if episode_length < 0:
        raise ValueError(f"episode length must be >= 0, got {episode_length}")
    if final_reward not in (-1, 0):
        raise ValueError(f"final reward must be -1 or 0, got {final_reward}")
    return [final_reward - (episode_length - t) for t in range(1, episode_length + 1)]


@dataclass(frozen=True)
class DatasetRecord:
    """One padded episode: constant-width bounds, steps, and target."""

    k: int
    bounds: tuple[int, ...]
    steps: tuple[TrajectoryStep, ...]
    target: tuple[int, ...]
    solved: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", tuple(int(b) for b in self.bounds))
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.k < 1:
            raise DatasetFormatError(f"k must be >= 1, got {self.k}")
        if len(self.bounds) != self.k or len(self.target) != self.k:
            raise DatasetFormatError(
                f"bounds/target must have length k={self.k}, "
                f"got {len(self.bounds)}/{len(self.target)}"
            )
        if any(b < 0 for b in self.bounds):
            raise DatasetFormatError(f"bounds must be non-negative: {self.bounds}")
        if any(not 0 <= t <= b for t, b in zip(self.target, self.bounds)):
            raise DatasetFormatError(
                f"target {self.target} outside bounds {self.bounds}"
            )
        for i, step in enumerate(self.steps):
            if len(step.action) != self.k:
                raise DatasetFormatError(
                    f"step {i} action has length {len(step.action)}, expected {self.k}"
                )
            if any(b not in (0, 1) for b in step.action):
                raise DatasetFormatError(f"step {i} action is not binary")
        if self.steps:
            if self.steps[0].state != sum(self.bounds):
                raise DatasetFormatError(
                    f"first state {self.steps[0].state} != sum of bounds "
                    f"{sum(self.bounds)}"
                )
            rtgs = [s.rtg for s in self.steps]
            if any(b - a != 1 for a, b in zip(rtgs, rtgs[1:])):
                raise DatasetFormatError(f"rtg sequence not increasing by 1: {rtgs}")
            if rtgs[-1] not in (-1, 0):
                raise DatasetFormatError(f"final rtg must be -1 or 0, got {rtgs[-1]}")

    @property
    def num_steps(self) -> int:
        return len(self.steps)


_UNIFORM_PVALS: dict[int, np.ndarray] = {}


def sample_standalone_bounds(k: int, rng: np.random.Generator) -> BoundsVector:
    """Occupancy of ``k`` defectives thrown uniformly into ``k`` groups."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pvals = _UNIFORM_PVALS.get(k)
    if pvals is None:
        pvals = _UNIFORM_PVALS[k] = np.full(k, 1.0 / k)
    return BoundsVector(tuple(rng.multinomial(k, pvals).tolist()))


def sample_standalone_hidden(bounds: BoundsVector, rng: np.random.Generator) -> HiddenVector:
    """Independent ``Binomial(u_i, 1/2)`` per coordinate (even-split limit).

    Drawn as runs of fair bits from one integer, which is equivalent and
    much cheaper than per-coordinate binomial calls at these sizes.
    """
    total = bounds.total
    if total > 62:
        values = rng.binomial(bounds.as_array(), 0.5)
        return HiddenVector(tuple(np.atleast_1d(values).tolist()))
    bits = int(rng.integers(0, 1 << total)) if total else 0
    values = []
    for u in bounds.u:
        values.append((bits & ((1 << u) - 1)).bit_count())
        bits >>= u
    return HiddenVector(tuple(values))


def reduce_bounds(padded: BoundsVector) -> tuple[BoundsVector, tuple[int, ...]]:
    """Drop zero coordinates; return the active bounds and their positions."""
    positions = tuple(i for i, b in enumerate(padded.u) if b > 0)
    if not positions:
        raise ValueError("all bounds are zero; nothing to recover")
    return BoundsVector(tuple(padded.u[i] for i in positions)), positions


def pad_record(
    trajectory: Trajectory,
    k: int,
    positions: Sequence[int],
    final_reward: int = -1,
) -> DatasetRecord:
    """Re-insert dropped coordinates at their original positions."""
    positions = tuple(int(p) for p in positions)
    if len(positions) != trajectory.bounds.d:
        raise ValueError(
            f"{len(positions)} positions for a {trajectory.bounds.d}-dim trajectory"
        )
    if any(not 0 <= p < k for p in positions):
        raise ValueError(f"positions {positions} outside 0..{k - 1}")
    bounds = [0] * k
    target = [0] * k
    for j, p in enumerate(positions):
        bounds[p] = trajectory.bounds.u[j]
        target[p] = trajectory.target.v[j]
    rtgs = compute_rtg(len(trajectory.steps), final_reward)
    steps = []
    for step, rtg in zip(trajectory.steps, rtgs):
        action = [0] * k
        for j, p in enumerate(positions):
            action[p] = step.action[j]
        steps.append(TrajectoryStep(rtg=rtg, state=step.state, action=tuple(action)))
    return DatasetRecord(
        k=k,
        bounds=tuple(bounds),
        steps=tuple(steps),
        target=tuple(target),
        solved=trajectory.solved,
    )


def generate_episode(
    k: int,
    strategy: Strategy,
    rng: np.random.Generator,
    max_steps: int | None = None,
    final_reward: int = -1,
) -> DatasetRecord:
    """Sample one standalone instance and run it to a padded record."""
    padded = sample_standalone_bounds(k, rng)
    active, positions = reduce_bounds(padded)
    hidden = sample_standalone_hidden(active, rng)
    cap = max_steps if max_steps is not None else 2 * k
    trajectory = run_episode(active, hidden, strategy, rng, max_steps=cap)
    return pad_record(trajectory, k, positions, final_reward=final_reward)


@dataclass(frozen=True)
class DatasetSummary:
    """What a generation run produced."""

    episodes_written: int
    episodes_generated: int
    mean_length: float
    solve_rate: float


def _record_to_obj(record: DatasetRecord) -> dict:
    return {
        "k": record.k,
        "bounds": list(record.bounds),
        "steps": [
            {"rtg": s.rtg, "state": s.state, "action": list(s.action)}
            for s in record.steps
        ],
        "target": list(record.target),
        "solved": record.solved,
    }


def encode_record(record: DatasetRecord) -> str:
    return json.dumps(_record_to_obj(record), separators=(",", ":"))


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise DatasetFormatError(f"{where}: missing field {key!r}")
    return obj[key]


def decode_record(line: str, line_number: int | None = None) -> DatasetRecord:
    where = f"line {line_number}" if line_number is not None else "record"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"{where}: expected an object, got {type(obj).__name__}")
    try:
        steps = tuple(
            TrajectoryStep(
                rtg=int(_require(s, "rtg", where)),
                state=int(_require(s, "state", where)),
                action=tuple(int(b) for b in _require(s, "action", where)),
            )
            for s in _require(obj, "steps", where)
        )
        return DatasetRecord(
            k=int(_require(obj, "k", where)),
            bounds=tuple(int(b) for b in _require(obj, "bounds", where)),
            steps=steps,
            target=tuple(int(t) for t in _require(obj, "target", where)),
            solved=bool(obj.get("solved", True)),
        )
    except DatasetFormatError as exc:
        if str(exc).startswith(where):
            raise
        raise DatasetFormatError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{where}: {exc}") from exc


def _open_sink(path: str | os.PathLike, compress: bool) -> IO[str]:
    path = Path(path)
    if compress or path.suffix == ".gz":
        # empty filename and pinned mtime keep the gzip header free of
        # incidental metadata, so equal datasets are byte-identical on disk
        raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        gz.myfileobj = raw  # hand over ownership: gz.close() closes raw
        return io.TextIOWrapper(gz, encoding="utf-8", newline="\n")
    return open(path, "w", encoding="utf-8", newline="\n")


def _open_source(path: str | os.PathLike) -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.GzipFile(path, mode="rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def write_jsonl(
    records: Iterable[DatasetRecord],
    sink: str | os.PathLike | IO[str],
    compress: bool = False,
) -> int:
    """Write records one per line; returns how many were written."""
    own = not hasattr(sink, "write")
    handle = _open_sink(sink, compress) if own else sink
    written = 0
    try:
        for record in records:
            try:
                handle.write(encode_record(record) + "\n")
            except OSError as exc:
                raise DatasetWriteError(
                    f"write failed after {written} records: {exc}"
                ) from exc
            written += 1
    finally:
        if own:
            handle.close()
    return written


def iter_jsonl(source: str | os.PathLike | IO[str]) -> Iterator[DatasetRecord]:
    """Yield records lazily, validating each line as it is read."""
    own = not hasattr(source, "read")
    handle = _open_source(source) if own else source
    try:
        for i, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            yield decode_record(line, line_number=i)
    finally:
        if own:
            handle.close()


def read_jsonl(source: str | os.PathLike | IO[str]) -> list[DatasetRecord]:
    return list(iter_jsonl(source))


def replay_record(record: DatasetRecord) -> None:
    """Re-simulate a record against its own target; raise on any mismatch.

    Checks that states chain correctly (first state is the bounds total,
    later states echo the previous answer), that every answer matches the
    target, and that the final feasible set agrees with the ``solved`` flag.
    """
    bounds = BoundsVector(record.bounds)
    oracle = FeasibilityOracle(bounds)
    expected_state = sum(record.bounds)
    for i, step in enumerate(record.steps):
        if step.state != expected_state:
            raise DatasetFormatError(
                f"step {i}: state {step.state} != expected {expected_state}"
            )
        answer = inner_answer(record.target, step.action)
        try:
            oracle.update(QueryRecord(step.action, answer))
        except InconsistentHistoryError as exc:
            raise DatasetFormatError(f"step {i}: {exc}") from exc
        expected_state = answer
    if oracle.identified != record.solved:
        raise DatasetFormatError(
            f"record marked solved={record.solved} but replay "
            f"{'identified' if oracle.identified else 'did not identify'} the target"
        )
    if record.solved and oracle.current.single() != record.target:
        raise DatasetFormatError(
            f"replay identified {oracle.current.single()}, record says {record.target}"
        )


def generate_dataset(
    k: int,
    strategy: Strategy | str,
    num_episodes: int,
    rng: np.random.Generator | int,
    sink: str | os.PathLike | IO[str] | None,
    max_steps: int | None = None,
    include_unsolved: bool = False,
    final_reward: int = -1,
    compress: bool = False,
) -> DatasetSummary:
    """Generate episodes and stream them to ``sink`` as JSONL.

    ``rng`` may be a generator (episodes drawn sequentially) or an integer
    seed, in which case each episode gets its own child generator derived
    from ``(seed, episode_index)`` so output does not depend on batching.
    Unsolved episodes (the random strategy can run out of steps) are
    excluded unless ``include_unsolved`` is set.  Pass ``sink=None`` to
    collect summaries without writing.
    """
    if num_episodes < 0:
        raise ValueError(f"num_episodes must be >= 0, got {num_episodes}")
    if isinstance(strategy, str):
        strategy = make_strategy(strategy)

    def episode_rngs() -> Iterator[np.random.Generator]:
        if isinstance(rng, (int, np.integer)):
            for i in range(num_episodes):
                yield np.random.default_rng(np.random.SeedSequence([int(rng), i]))
        else:
            for _ in range(num_episodes):
                yield rng

    own = sink is not None and not hasattr(sink, "write")
    handle = _open_sink(sink, compress) if own else sink
    written = 0
    solved = 0
    length_sum = 0
    try:
        for episode_rng in episode_rngs():
            record = generate_episode(
                k, strategy, episode_rng, max_steps=max_steps, final_reward=final_reward
            )
            solved += record.solved
            if not record.solved and not include_unsolved:
                continue
            if handle is not None:
                try:
                    handle.write(encode_record(record) + "\n")
                except OSError as exc:
                    raise DatasetWriteError(
                        f"write failed after {written} records: {exc}"
                    ) from exc
            written += 1
            length_sum += record.num_steps
    finally:
        if own:
            handle.close()
    return DatasetSummary(
        episodes_written=written,
        episodes_generated=num_episodes,
        mean_length=length_sum / written if written else float("nan"),
        solve_rate=solved / num_episodes if num_episodes else float("nan"),
    )
