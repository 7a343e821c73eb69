"""JSONL trajectory datasets: parsing, validation, tensor assembly.

The on-disk format is one JSON object per line (optionally gzipped):

    {"k": 2, "bounds": [1, 1],
     "steps": [{"rtg": -2, "state": 2, "action": [1, 1]},
               {"rtg": -1, "state": 1, "action": [0, 1]}],
     "target": [0, 1], "solved": true}

``k`` is the fixed action width; ``bounds`` are per-coordinate upper
bounds summing over the hidden target; each step carries the
return-to-go before the query, the observed count (the first one is
always ``sum(bounds)``), and the 0/1 query mask played.  Parsing aborts
on the first malformed record and reports its 1-based position.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import torch

__all__ = [
    "DataError",
    "Episode",
    "TensorBatch",
    "iter_episodes",
    "load_episodes",
    "tensorize",
]


class DataError(Exception):
    """A dataset file or record violates the trajectory schema."""


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass(frozen=True)
class Episode:
    """One recorded episode; ``index`` is its 1-based record number in the file."""

    index: int
    k: int
    bounds: tuple[int, ...]
    rtgs: tuple[int, ...]
    states: tuple[int, ...]
    actions: tuple[tuple[int, ...], ...]
    target: tuple[int, ...]
    solved: bool

    @property
    def length(self) -> int:
        return len(self.states)


def _parse_record(obj, index: int) -> Episode:
    def fail(message: str) -> DataError:
        return DataError(f"record {index}: {message}")

    if not isinstance(obj, dict):
        raise fail(f"expected an object, got {type(obj).__name__}")
    for field in ("k", "bounds", "steps", "target"):
        if field not in obj:
            raise fail(f"missing field {field!r}")

    k = obj["k"]
    if not _is_int(k) or k < 1:
        raise fail(f"k must be a positive integer, got {k!r}")

    bounds = obj["bounds"]
    if (
        not isinstance(bounds, list)
        or len(bounds) != k
        or not all(_is_int(b) and b >= 0 for b in bounds)
    ):
        raise fail(f"bounds must be {k} non-negative integers, got {bounds!r}")

    target = obj["target"]
    if not isinstance(target, list) or len(target) != k or not all(_is_int(t) for t in target):
        raise fail(f"target must be {k} integers, got {target!r}")
    if any(not 0 <= t <= b for t, b in zip(target, bounds)):
        raise fail(f"target {target} outside bounds {bounds}")

    steps = obj["steps"]
    if not isinstance(steps, list):
        raise fail(f"steps must be a list, got {type(steps).__name__}")
    rtgs: list[int] = []
    states: list[int] = []
    actions: list[tuple[int, ...]] = []
    for t, step in enumerate(steps):
        if not isinstance(step, dict):
            raise fail(f"step {t} must be an object")
        for field in ("rtg", "state", "action"):
            if field not in step:
                raise fail(f"step {t} missing field {field!r}")
        if not _is_int(step["rtg"]):
            raise fail(f"step {t} rtg must be an integer, got {step['rtg']!r}")
        if not _is_int(step["state"]) or step["state"] < 0:
            raise fail(f"step {t} state must be a non-negative integer, got {step['state']!r}")
        action = step["action"]
        if not isinstance(action, list) or len(action) != k or any(b not in (0, 1) for b in action):
            raise fail(f"step {t} action must be {k} bits, got {action!r}")
        rtgs.append(step["rtg"])
        states.append(step["state"])
        actions.append(tuple(action))

    if states:
        if states[0] != sum(bounds):
            raise fail(f"first state {states[0]} != sum of bounds {sum(bounds)}")
        if any(b - a != 1 for a, b in zip(rtgs, rtgs[1:])):
            raise fail(f"rtg sequence not increasing by 1: {rtgs}")
        if rtgs[-1] not in (-1, 0):
            raise fail(f"final rtg must be -1 or 0, got {rtgs[-1]}")

    solved = obj.get("solved", True)
    if not isinstance(solved, bool):
        raise fail(f"solved must be a boolean, got {solved!r}")

    return Episode(
        index=index,
        k=k,
        bounds=tuple(bounds),
        rtgs=tuple(rtgs),
        states=tuple(states),
        actions=tuple(actions),
        target=tuple(target),
        solved=solved,
    )


def _open_text(path: Path) -> IO[str]:
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def iter_episodes(path: str | Path) -> Iterator[Episode]:
    """Yield episodes from a JSONL(.gz) file, aborting on the first bad record."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    index = 0
    try:
        with _open_text(path) as handle:
            for line in handle:
                if not line.strip():
                    continue
                index += 1
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"record {index}: invalid JSON ({exc.msg})") from exc
                yield _parse_record(obj, index)
    except (OSError, gzip.BadGzipFile, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_episodes(path: str | Path) -> list[Episode]:
    """Read a whole dataset file into memory."""
    return list(iter_episodes(path))


@dataclass(frozen=True)
class TensorBatch:
    """Fixed-width training tensors: ``mask`` flags the real steps of each row."""

    bounds: torch.Tensor  # (N, k) float32
    rtg: torch.Tensor  # (N, l) float32
    state: torch.Tensor  # (N, l) float32
    action: torch.Tensor  # (N, l, k) float32
    mask: torch.Tensor  # (N, l) bool

    @property
    def num_sequences(self) -> int:
        return self.bounds.shape[0]

    @property
    def num_steps(self) -> int:
        return int(self.mask.sum())


def tensorize(episodes: Iterable[Episode], *, k: int, context_steps: int) -> TensorBatch:
    """Pack episodes into padded tensors of ``context_steps`` steps each.

    Rejects episodes whose width differs from ``k`` or whose length
    exceeds the context window; zero-length episodes carry no training
    signal and are dropped.
    """
    kept: list[Episode] = []
    for ep in episodes:
        if ep.k != k:
            raise DataError(f"record {ep.index}: k={ep.k}, expected {k}")
        if ep.length > context_steps:
            raise DataError(
                f"record {ep.index}: episode length {ep.length} exceeds "
                f"context length {context_steps}"
            )
        if ep.length > 0:
            kept.append(ep)
    if not kept:
        raise DataError("dataset contains no steps to train on")

    n = len(kept)
    bounds = torch.zeros((n, k), dtype=torch.float32)
    rtg = torch.zeros((n, context_steps), dtype=torch.float32)
    state = torch.zeros((n, context_steps), dtype=torch.float32)
    action = torch.zeros((n, context_steps, k), dtype=torch.float32)
    mask = torch.zeros((n, context_steps), dtype=torch.bool)
    for row, ep in enumerate(kept):
        length = ep.length
        bounds[row] = torch.tensor(ep.bounds, dtype=torch.float32)
        rtg[row, :length] = torch.tensor(ep.rtgs, dtype=torch.float32)
        state[row, :length] = torch.tensor(ep.states, dtype=torch.float32)
        action[row, :length] = torch.tensor(ep.actions, dtype=torch.float32)
        mask[row, :length] = True
    return TensorBatch(bounds=bounds, rtg=rtg, state=state, action=action, mask=mask)
