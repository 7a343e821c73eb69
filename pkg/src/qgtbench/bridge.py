"""Newline-delimited JSON protocol for external query agents.

The harness spawns the agent as a child process and talks over its standard
streams, one JSON object per line.  A session serves any number of episodes
in sequence:

    harness -> agent   {"type": "init", "k": ..., "bounds": [...], "rtg": ...}
    agent -> harness   {"type": "query", "mask": [...]}
    harness -> agent   {"type": "result", "answer": ..., "solved": ..., "rtg": ...}
    ... query/result alternate until a result carries solved=true ...
    harness -> agent   {"type": "done"}          # end of session
    either direction   {"type": "error", "reason": "..."}

Masks are full padded length-``k`` vectors; the harness projects them onto
the active coordinates.  Return-to-go starts at the configured initial
value, goes up by one per step, and clamps at -1.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from typing import IO, Sequence

import numpy as np

from .core import BoundsVector, QgtError
from .strategies import Strategy

__all__ = [
    "ProtocolError",
    "MESSAGE_TYPES",
    "encode_message",
    "decode_message",
    "AgentSession",
    "ExternalStrategy",
]


class ProtocolError(QgtError):
    """The agent (or its transport) violated the bridge protocol."""


MESSAGE_TYPES = ("init", "query", "result", "done", "error")

_REQUIRED_FIELDS = {
    "init": ("k", "bounds", "rtg"),
    "query": ("mask",),
    "result": ("answer", "solved", "rtg"),
    "done": (),
    "error": ("reason",),
}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _validate_message(msg: dict) -> dict:
    if not isinstance(msg, dict):
        raise ProtocolError(f"message must be an object, got {type(msg).__name__}")
    mtype = msg.get("type")
    if mtype not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")
    for field in _REQUIRED_FIELDS[mtype]:
        if field not in msg:
            raise ProtocolError(f"{mtype} message missing field {field!r}")
    out = dict(msg)
    if mtype == "init":
        if not _is_int(out["k"]) or out["k"] < 1:
            raise ProtocolError(f"init k must be a positive integer, got {out['k']!r}")
        bounds = out["bounds"]
        if not isinstance(bounds, (list, tuple)) or not all(
            _is_int(b) and b >= 0 for b in bounds
        ):
            raise ProtocolError(f"init bounds must be non-negative integers, got {bounds!r}")
        if len(bounds) != out["k"]:
            raise ProtocolError(
                f"init bounds length {len(bounds)} != k {out['k']}"
            )
        if not _is_int(out["rtg"]):
            raise ProtocolError(f"init rtg must be an integer, got {out['rtg']!r}")
        out["bounds"] = list(bounds)
    elif mtype == "query":
        mask = out["mask"]
        if (
            not isinstance(mask, (list, tuple))
            or len(mask) == 0
            or not all(_is_int(b) and b in (0, 1) for b in mask)
        ):
            raise ProtocolError(f"query mask must be a non-empty 0/1 list, got {mask!r}")
        out["mask"] = list(mask)
    elif mtype == "result":
        if not _is_int(out["answer"]) or out["answer"] < 0:
            raise ProtocolError(
                f"result answer must be a non-negative integer, got {out['answer']!r}"
            )
        if not isinstance(out["solved"], bool):
            raise ProtocolError(f"result solved must be a boolean, got {out['solved']!r}")
        if not _is_int(out["rtg"]):
            raise ProtocolError(f"result rtg must be an integer, got {out['rtg']!r}")
    elif mtype == "error":
        if not isinstance(out["reason"], str):
            raise ProtocolError(f"error reason must be a string, got {out['reason']!r}")
    return out


def encode_message(msg: dict) -> str:
    """One message, one line; raises :class:`ProtocolError` on bad payloads."""
    return json.dumps(_validate_message(msg), separators=(",", ":"), sort_keys=True)


def decode_message(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"undecodable message line {line!r}: {exc.msg}") from exc
    return _validate_message(obj)


class AgentSession:
    """A running agent child process with line-based send/receive.

    Stdout is drained by a background thread so receives can time out
    instead of blocking forever on a hung agent.
    """

    def __init__(self, cmd: str | Sequence[str], timeout: float = 10.0):
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._reader: threading.Thread | None = None

    @property
    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def start(self) -> None:
        if self.alive:
            return
        self._lines = queue.Queue()
        self._proc = subprocess.Popen(
            self.cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = threading.Thread(target=self._drain, daemon=True)
        self._reader.start()

    def _drain(self) -> None:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def send(self, msg: dict) -> None:
        if not self.alive:
            raise ProtocolError("cannot send: agent process is not running")
        line = encode_message(msg)
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"agent closed its input: {exc}") from exc

    def recv(self, timeout: float | None = None) -> dict:
        try:
            line = self._lines.get(timeout=timeout if timeout is not None else self.timeout)
        except queue.Empty:
            raise ProtocolError(
                f"timed out after {timeout or self.timeout:.1f}s waiting for the agent"
            ) from None
        if line is None:
            raise ProtocolError("agent closed its output stream")
        return decode_message(line.rstrip("\n"))

    def close(self, graceful: bool = True) -> None:
        proc = self._proc
        if proc is None:
            return
        if proc.poll() is None:
            if graceful:
                try:
                    self.send({"type": "done"})
                except ProtocolError:
                    pass
            try:
                if proc.stdin is not None:
                    proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        self._proc = None

    def __enter__(self) -> "AgentSession":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ExternalStrategy(Strategy):
    """Adapter that lets an agent process drive episodes as a strategy.

    The adapter owns the session lifecycle: it (re)spawns the agent lazily,
    replays the init/query/result alternation per episode, keeps the
    return-to-go counter, and tears the session down after a protocol
    failure or an unsolved episode so the next episode starts clean.
    """

    name = "external"

    def __init__(
        self,
        cmd: str | Sequence[str],
        k: int,
        initial_rtg: int = -1,
        timeout: float = 10.0,
    ):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if initial_rtg > -1:
            raise ValueError(f"initial rtg must be <= -1, got {initial_rtg}")
        self.cmd = cmd
        self.k = k
        self.initial_rtg = initial_rtg
        self.timeout = timeout
        self._session: AgentSession | None = None
        self._positions: tuple[int, ...] = tuple(range(k))
        self._rtg = initial_rtg

    def set_instance(self, positions: Sequence[int]) -> None:
        """Declare which padded coordinates the next episode's bounds occupy."""
        positions = tuple(int(p) for p in positions)
        if any(not 0 <= p < self.k for p in positions):
            raise ValueError(f"positions {positions} outside 0..{self.k - 1}")
        if sorted(set(positions)) != list(positions):
            raise ValueError(f"positions must be strictly increasing: {positions}")
        self._positions = positions

    def _ensure_session(self) -> AgentSession:
        if self._session is None or not self._session.alive:
            self._session = AgentSession(self.cmd, timeout=self.timeout)
            self._session.start()
        return self._session

    def _abort(self) -> None:
        if self._session is not None:
            self._session.close(graceful=False)
            self._session = None

    def begin(self, bounds: BoundsVector, rng: np.random.Generator) -> None:
        if bounds.d != len(self._positions):
            # No positions declared for this episode (e.g. driver stages):
            # occupy the leading coordinates and zero-pad the rest.
            if bounds.d > self.k:
                raise ProtocolError(
                    f"{bounds.d}-dim bounds exceed the agent's width k={self.k}"
                )
            self._positions = tuple(range(bounds.d))
        padded = [0] * self.k
        for j, p in enumerate(self._positions):
            padded[p] = bounds.u[j]
        self._rtg = self.initial_rtg
        try:
            self._ensure_session().send(
                {"type": "init", "k": self.k, "bounds": padded, "rtg": self._rtg}
            )
        except ProtocolError:
            self._abort()
            raise

    def propose(self, fs, bounds, history, rng) -> tuple[int, ...]:
        session = self._session
        if session is None:
            raise ProtocolError("episode not initialized")
        try:
            msg = session.recv()
            if msg["type"] == "error":
                raise ProtocolError(f"agent reported an error: {msg['reason']}")
            if msg["type"] != "query":
                raise ProtocolError(f"expected a query message, got {msg['type']!r}")
            mask = msg["mask"]
            if len(mask) != self.k:
                raise ProtocolError(
                    f"mask has length {len(mask)}, expected k={self.k}"
                )
            if not any(mask):
                raise ProtocolError("agent sent an all-zero mask")
        except ProtocolError:
            self._abort()
            raise
        return tuple(mask[p] for p in self._positions)

    def observe(self, answer: int, identified: bool) -> None:
        self._rtg = min(self._rtg + 1, -1)
        session = self._session
        if session is None:
            raise ProtocolError("episode not initialized")
        try:
            session.send(
                {"type": "result", "answer": int(answer), "solved": bool(identified), "rtg": self._rtg}
            )
        except ProtocolError:
            self._abort()
            raise

    def end_episode(self, solved: bool) -> None:
        # After an unsolved (truncated) episode the agent has a pending
        # query in flight; drop the session so the next episode resyncs.
        if not solved and self._session is not None:
            self._session.close(graceful=True)
            self._session = None

    def close(self) -> None:
        if self._session is not None:
            self._session.close(graceful=True)
            self._session = None
