"""Inference: single-step mask prediction and the bridge-protocol server.

The wire protocol is newline-delimited JSON on standard streams:

    harness -> agent   {"type": "init", "k": ..., "bounds": [...], "rtg": ...}
    agent -> harness   {"type": "query", "mask": [...]}
    harness -> agent   {"type": "result", "answer": ..., "solved": ..., "rtg": ...}
    harness -> agent   {"type": "done"}
    either direction   {"type": "error", "reason": "..."}

``serve`` answers every round with the model's thresholded mask exactly as
predicted — even an all-zero mask, which the harness rejects and counts as
a failed episode.  A ``solved`` result ends the episode; the session stays
open for the next ``init``.  Any protocol violation from the harness side
gets an ``error`` reply and a nonzero exit.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import torch

from .model import ModelConfig, ReturnConditionedTransformer, load_checkpoint

__all__ = ["EpisodeHistory", "predict_action", "serve"]


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass
class EpisodeHistory:
    """Everything observed so far in one episode.

    ``rtgs`` and ``states`` carry one entry per step including the current
    (pending) one; ``actions`` carries one entry per completed step, so
    ``len(actions) == len(states) - 1`` at decision time.
    """

    bounds: tuple[int, ...]
    rtgs: list[int] = field(default_factory=list)
    states: list[int] = field(default_factory=list)
    actions: list[tuple[int, ...]] = field(default_factory=list)

    @classmethod
    def start(cls, bounds: tuple[int, ...], initial_rtg: int) -> "EpisodeHistory":
        return cls(bounds=tuple(bounds), rtgs=[initial_rtg], states=[sum(bounds)])

    def advance(self, action: tuple[int, ...], answer: int, rtg: int) -> None:
        """Record the played action and the observation opening the next step."""
        self.actions.append(tuple(action))
        self.states.append(answer)
        self.rtgs.append(rtg)

    @property
    def steps_seen(self) -> int:
        return len(self.states)


def predict_action(
    model: ReturnConditionedTransformer, history: EpisodeHistory
) -> tuple[int, ...]:
    """Thresholded mask for the current step of ``history``.

    Histories longer than the model's context window are truncated to the
    most recent ``context_steps`` steps; the bounds prefix (when the model
    uses one) always stays.
    """
    config = model.config
    length = config.context_steps
    seen = history.steps_seen
    if seen == 0 or len(history.rtgs) != seen or len(history.actions) != seen - 1:
        raise ValueError(
            f"history must hold one pending step: {seen} states, "
            f"{len(history.rtgs)} rtgs, {len(history.actions)} actions"
        )
    low = max(0, seen - length)
    window_rtgs = history.rtgs[low:]
    window_states = history.states[low:]
    window_actions = history.actions[low:]
    current = len(window_states) - 1

    bounds = torch.tensor([history.bounds], dtype=torch.float32)
    rtg = torch.zeros((1, length), dtype=torch.float32)
    state = torch.zeros((1, length), dtype=torch.float32)
    action = torch.zeros((1, length, config.k), dtype=torch.float32)
    rtg[0, : current + 1] = torch.tensor(window_rtgs, dtype=torch.float32)
    state[0, : current + 1] = torch.tensor(window_states, dtype=torch.float32)
    if window_actions:
        action[0, :current] = torch.tensor(window_actions, dtype=torch.float32)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model(bounds, rtg, state, action)[0, current]
    finally:
        if was_training:
            model.train()
    return model.decode_bits(logits)


def _send(out: IO[str], obj: dict) -> None:
    out.write(json.dumps(obj, separators=(",", ":")) + "\n")
    out.flush()


def _valid_init(msg: dict, config: ModelConfig) -> str | None:
    k = msg.get("k")
    if not _is_int(k) or k < 1:
        return f"init k must be a positive integer, got {k!r}"
    if k != config.k:
        return f"checkpoint expects k={config.k}, harness sent k={k}"
    bounds = msg.get("bounds")
    if not isinstance(bounds, list) or len(bounds) != k or not all(
        _is_int(b) and b >= 0 for b in bounds
    ):
        return f"init bounds must be {k} non-negative integers, got {bounds!r}"
    if not _is_int(msg.get("rtg")):
        return f"init rtg must be an integer, got {msg.get('rtg')!r}"
    return None


def _valid_result(msg: dict) -> str | None:
    if not _is_int(msg.get("answer")) or msg["answer"] < 0:
        return f"result answer must be a non-negative integer, got {msg.get('answer')!r}"
    if not isinstance(msg.get("solved"), bool):
        return f"result solved must be a boolean, got {msg.get('solved')!r}"
    if not _is_int(msg.get("rtg")):
        return f"result rtg must be an integer, got {msg.get('rtg')!r}"
    return None


def serve(
    checkpoint_dir: str | Path,
    stdin: IO[str] | None = None,
    stdout: IO[str] | None = None,
) -> int:
    """Play episodes over the line protocol until ``done`` or end of input."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    model, config = load_checkpoint(checkpoint_dir)

    def refuse(reason: str) -> int:
        _send(stdout, {"type": "error", "reason": reason})
        return 1

    history: EpisodeHistory | None = None
    pending_mask: tuple[int, ...] | None = None
    with torch.no_grad():
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                return refuse(f"invalid JSON: {exc.msg}")
            if not isinstance(msg, dict) or "type" not in msg:
                return refuse("message must be an object with a 'type' field")
            mtype = msg["type"]

            if mtype == "done":
                return 0
            if mtype == "error":
                return 1
            if mtype == "init":
                if history is not None:
                    return refuse("init during an active episode")
                problem = _valid_init(msg, config)
                if problem is not None:
                    return refuse(problem)
                history = EpisodeHistory.start(tuple(msg["bounds"]), msg["rtg"])
                pending_mask = predict_action(model, history)
                _send(stdout, {"type": "query", "mask": list(pending_mask)})
            elif mtype == "result":
                if history is None or pending_mask is None:
                    return refuse("result before init")
                problem = _valid_result(msg)
                if problem is not None:
                    return refuse(problem)
                if msg["solved"]:
                    history = None
                    pending_mask = None
                    continue
                history.advance(pending_mask, msg["answer"], msg["rtg"])
                pending_mask = predict_action(model, history)
                _send(stdout, {"type": "query", "mask": list(pending_mask)})
            else:
                return refuse(f"unknown message type {mtype!r}")
    return 0
