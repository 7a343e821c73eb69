"""Return-conditioned transformer agent for pooled count-query games.

The package trains a small causal transformer to imitate the query
strategy recorded in a JSONL trajectory dataset, then plays the learned
policy either through the newline-JSON bridge protocol (``dtagent serve``)
or through a benchmark sweep over initial return-to-go values
(``dtagent evaluate``).

It is deliberately decoupled from the workbench that produces the data:
the JSONL record format, the checkpoint directory layout, the bridge line
protocol, and the ``qgtbench`` command line are the only couplings, and
none of them require importing workbench code.
"""

from .data import DataError, Episode, TensorBatch, iter_episodes, load_episodes, tensorize
from .model import (
    ACTION_HEADS,
    CheckpointError,
    ModelConfig,
    ReturnConditionedTransformer,
    load_checkpoint,
    save_checkpoint,
)
from .train import TrainResult, train_model
from .agent import EpisodeHistory, predict_action, serve
from .evaluate import EvalReport, EvaluationError, RtgOutcome, evaluate

__version__ = "0.1.0"

__all__ = [
    "ACTION_HEADS",
    "CheckpointError",
    "DataError",
    "Episode",
    "EpisodeHistory",
    "EvalReport",
    "EvaluationError",
    "ModelConfig",
    "ReturnConditionedTransformer",
    "RtgOutcome",
    "TensorBatch",
    "TrainResult",
    "evaluate",
    "iter_episodes",
    "load_checkpoint",
    "load_episodes",
    "predict_action",
    "save_checkpoint",
    "serve",
    "tensorize",
    "train_model",
    "__version__",
]
