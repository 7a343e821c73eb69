"""Shared fixtures: a small expert dataset, a trained checkpoint, bridge helpers.

The workbench is only ever touched through its command line; datasets are
generated by shelling out to ``qgtbench gen-dataset`` exactly as a user
would.
"""

from __future__ import annotations

import json
import selectors
import subprocess
import sys
from pathlib import Path

import pytest

from dtagent import ModelConfig, train_model

WORKBENCH = (sys.executable, "-m", "qgtbench")


def generate_dataset(path: Path, *, k: int, episodes: int, seed: int, strategy: str = "entropy") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    subprocess.run(
        [
            *WORKBENCH,
            "gen-dataset",
            "--k",
            str(k),
            "--strategy",
            strategy,
            "--episodes",
            str(episodes),
            "--out",
            str(path),
            "--seed",
            str(seed),
        ],
        check=True,
        capture_output=True,
        text=True,
    )
    return path


@pytest.fixture(scope="session")
def workbench() -> tuple[str, ...]:
    return WORKBENCH


@pytest.fixture(scope="session")
def dataset_k2(tmp_path_factory) -> Path:
    """2000 expert episodes at k=2: enough to pin the policy exactly."""
    out = tmp_path_factory.mktemp("data") / "k2.jsonl"
    return generate_dataset(out, k=2, episodes=2000, seed=11)


@pytest.fixture(scope="session")
def trained_k2(tmp_path_factory, dataset_k2):
    """A checkpoint that has fully absorbed the k=2 expert."""
    out = tmp_path_factory.mktemp("ckpt") / "k2"
    config = ModelConfig(k=2, context_steps=4, epochs=2, batch_size=256, seed=0)
    result = train_model(dataset_k2, config, out)
    return result


@pytest.fixture(scope="session")
def ckpt_k2(trained_k2) -> Path:
    return trained_k2.checkpoint_dir


def serve_argv(checkpoint: Path) -> list[str]:
    return [sys.executable, "-m", "dtagent", "serve", "--checkpoint", str(checkpoint)]


class BridgeClient:
    """Drives a serve subprocess over its stdio pipes with timeouts."""

    def __init__(self, checkpoint: Path):
        self.proc = subprocess.Popen(
            serve_argv(checkpoint),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        self._selector = selectors.DefaultSelector()
        self._selector.register(self.proc.stdout, selectors.EVENT_READ)

    def send(self, obj: dict) -> None:
        self.proc.stdin.write(json.dumps(obj) + "\n")
        self.proc.stdin.flush()

    def send_raw(self, line: str) -> None:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def recv(self, timeout: float = 30.0) -> dict:
        if not self._selector.select(timeout):
            self.proc.kill()
            raise AssertionError("timed out waiting for the agent to reply")
        line = self.proc.stdout.readline()
        if not line:
            raise AssertionError("agent closed stdout unexpectedly")
        return json.loads(line)

    def close_stdin(self) -> None:
        self.proc.stdin.close()

    def wait(self, timeout: float = 30.0) -> int:
        try:
            return self.proc.wait(timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            raise AssertionError("agent did not exit")

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()
        self._selector.close()
