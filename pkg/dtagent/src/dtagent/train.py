"""Supervised training: imitate the dataset's query masks at every state token.

The loss is the mean elementwise binary cross-entropy over all real state
positions (or the mean ``2^k``-way cross-entropy in ``joint`` head mode);
padded positions are masked out, so gradients flow only from state tokens
of real steps.  Training writes a checkpoint directory containing
``config.json`` (manifest with the model config and training metadata),
``weights.pt``, and ``loss_curve.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch

from .data import load_episodes, tensorize
from .model import (
    LOSS_CURVE_FILENAME,
    ModelConfig,
    ReturnConditionedTransformer,
    save_checkpoint,
)

__all__ = ["TrainResult", "train_model"]


@dataclass(frozen=True)
class TrainResult:
    """Where the checkpoint landed and how the loss moved."""

    checkpoint_dir: Path
    config: ModelConfig
    episodes: int
    steps: int
    epoch_loss: tuple[float, ...]

    @property
    def final_loss(self) -> float:
        return self.epoch_loss[-1]


def train_model(
    dataset_path: str | Path,
    config: ModelConfig,
    out_dir: str | Path,
    *,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Fit a model to a JSONL dataset and save it under ``out_dir``.

    ``progress`` (if given) is called after each epoch with
    ``(epoch_index, mean_epoch_loss)``.  The reported loss is the exact
    dataset mean for the epoch: per-batch sums and term counts are
    accumulated, not averaged batch means.
    """
    episodes = load_episodes(dataset_path)
    batch_tensors = tensorize(episodes, k=config.k, context_steps=config.context_steps)
    n = batch_tensors.num_sequences

    torch.manual_seed(config.seed)
    model = ReturnConditionedTransformer(config)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    shuffle = torch.Generator().manual_seed(config.seed)

    epoch_loss: list[float] = []
    for epoch in range(config.epochs):
        order = torch.randperm(n, generator=shuffle)
        loss_sum = 0.0
        term_count = 0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            logits = model(
                batch_tensors.bounds[rows],
                batch_tensors.rtg[rows],
                batch_tensors.state[rows],
                batch_tensors.action[rows],
            )
            batch_sum, batch_terms = model.action_loss_terms(
                logits, batch_tensors.action[rows], batch_tensors.mask[rows]
            )
            loss = batch_sum / batch_terms
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += float(batch_sum.detach())
            term_count += int(batch_terms)
        epoch_loss.append(loss_sum / term_count)
        if progress is not None:
            progress(epoch, epoch_loss[-1])

    out_dir = Path(out_dir)
    training_meta = {
        "dataset": str(dataset_path),
        "episodes": n,
        "steps": batch_tensors.num_steps,
        "epoch_loss": epoch_loss,
    }
    save_checkpoint(model, out_dir, training_meta)
    (out_dir / LOSS_CURVE_FILENAME).write_text(
        json.dumps({"epoch_loss": epoch_loss}, indent=2) + "\n", encoding="utf-8"
    )
    return TrainResult(
        checkpoint_dir=out_dir,
        config=config,
        episodes=n,
        steps=batch_tensors.num_steps,
        epoch_loss=tuple(epoch_loss),
    )
