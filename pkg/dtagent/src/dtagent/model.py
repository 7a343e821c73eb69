"""Return-conditioned causal transformer over (rtg, state, action) triplets.

Each episode becomes a token sequence: an optional prefix of ``k`` bounds
tokens, then one (return-to-go, state, action) triplet per step — ``3l``
tokens, or ``3l + k`` with the prefix.  Every modality is embedded by its
own linear layer, passed through a shared projection with layer
normalization, and tagged with a learned positional embedding.  A causal
mask keeps position ``t`` attending only to positions ``<= t``, and the
action head reads ``k`` binary logits (or a ``2^k``-way distribution in
``joint`` mode) at each state token.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "ACTION_HEADS",
    "CheckpointError",
    "ModelConfig",
    "ReturnConditionedTransformer",
    "load_checkpoint",
    "save_checkpoint",
]

ACTION_HEADS = ("factored", "joint")

CONFIG_FILENAME = "config.json"
WEIGHTS_FILENAME = "weights.pt"
LOSS_CURVE_FILENAME = "loss_curve.json"

# joint mode enumerates all 2^k masks; keep that tractable
MAX_JOINT_K = 4


class CheckpointError(Exception):
    """A checkpoint directory is missing files or holds an invalid manifest."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyper-parameters.

    ``context_steps`` is the episode capacity ``l``; training rejects any
    episode longer than it.  ``bounds_prefix`` selects the sequence design
    with ``k`` leading bounds tokens; ``action_head`` picks ``k``
    independent Bernoulli logits (``factored``) or one ``2^k``-way softmax
    (``joint``, limited to small ``k``).
    """

    k: int
    context_steps: int
    embed_dim: int = 128
    num_layers: int = 3
    num_heads: int = 4
    bounds_prefix: bool = True
    action_head: str = "factored"
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.context_steps < 1:
            raise ValueError(f"context_steps must be >= 1, got {self.context_steps}")
        if self.embed_dim < 1 or self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("embed_dim, num_layers, num_heads must be >= 1")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.action_head not in ACTION_HEADS:
            raise ValueError(f"action_head must be one of {ACTION_HEADS}, got {self.action_head!r}")
        if self.action_head == "joint" and self.k > MAX_JOINT_K:
            raise ValueError(f"joint action head supports k <= {MAX_JOINT_K}, got k={self.k}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    @property
    def prefix_tokens(self) -> int:
        return self.k if self.bounds_prefix else 0

    @property
    def max_tokens(self) -> int:
        return self.prefix_tokens + 3 * self.context_steps

    @property
    def action_classes(self) -> int:
        return self.k if self.action_head == "factored" else 1 << self.k

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        if not isinstance(obj, dict):
            raise CheckpointError(f"model config must be an object, got {type(obj).__name__}")
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - fields
        missing = fields - set(obj)
        if unknown or missing:
            raise CheckpointError(
                f"model config fields mismatch: unknown {sorted(unknown)}, missing {sorted(missing)}"
            )
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"invalid model config: {exc}") from exc


class _Block(nn.Module):
    """Pre-norm transformer block: masked self-attention plus a GELU MLP."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.mlp_norm = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        h = self.attn_norm(x)
        attended, _ = self.attn(h, h, h, attn_mask=causal_mask, need_weights=False)
        x = x + attended
        return x + self.mlp(self.mlp_norm(x))


class ReturnConditionedTransformer(nn.Module):
    """Predicts the query mask at every state token of an episode sequence."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        dim = config.embed_dim
        self.rtg_embed = nn.Linear(1, dim)
        self.state_embed = nn.Linear(1, dim)
        self.action_embed = nn.Linear(config.k, dim)
        self.bounds_embed = nn.Linear(1, dim) if config.bounds_prefix else None
        self.project = nn.Linear(dim, dim)
        self.token_norm = nn.LayerNorm(dim)
        self.position_embed = nn.Parameter(torch.empty(config.max_tokens, dim))
        nn.init.normal_(self.position_embed, std=0.02)
        self.blocks = nn.ModuleList(
            _Block(dim, config.num_heads) for _ in range(config.num_layers)
        )
        self.final_norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, config.action_classes)
        mask = torch.triu(torch.ones(config.max_tokens, config.max_tokens, dtype=torch.bool), 1)
        self.register_buffer("causal_mask", mask, persistent=False)
        if config.action_head == "joint":
            weights = torch.tensor([1 << i for i in range(config.k)], dtype=torch.long)
            self.register_buffer("bit_weights", weights, persistent=False)

    def forward(
        self,
        bounds: torch.Tensor,
        rtg: torch.Tensor,
        state: torch.Tensor,
        action: torch.Tensor,
    ) -> torch.Tensor:
        """Action logits at each state token: (batch, context_steps, action_classes).

        Inputs are full-width: ``rtg``/``state`` are (batch, l), ``action``
        is (batch, l, k), ``bounds`` is (batch, k).  Content after a row's
        real steps is ignored by causality, so zero padding is safe.
        """
        cfg = self.config
        batch, length = rtg.shape
        if length != cfg.context_steps:
            raise ValueError(f"expected {cfg.context_steps} steps, got {length}")
        triplets = torch.stack(
            (
                self.rtg_embed(rtg.unsqueeze(-1)),
                self.state_embed(state.unsqueeze(-1)),
                self.action_embed(action),
            ),
            dim=2,
        ).reshape(batch, 3 * length, cfg.embed_dim)
        if self.bounds_embed is not None:
            prefix = self.bounds_embed(bounds.unsqueeze(-1))
            sequence = torch.cat((prefix, triplets), dim=1)
        else:
            sequence = triplets
        total = sequence.shape[1]
        sequence = self.token_norm(self.project(sequence))
        sequence = sequence + self.position_embed[:total]
        causal = self.causal_mask[:total, :total]
        for block in self.blocks:
            sequence = block(sequence, causal)
        sequence = self.final_norm(sequence)
        state_positions = cfg.prefix_tokens + 3 * torch.arange(length, device=rtg.device) + 1
        return self.head(sequence[:, state_positions, :])

    def action_loss_terms(
        self, logits: torch.Tensor, action: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Summed cross-entropy over real state positions, and the term count.

        ``factored`` counts one term per (step, coordinate); ``joint``
        counts one term per step.  Dividing the pair gives the mean loss.
        """
        if self.config.action_head == "factored":
            per = F.binary_cross_entropy_with_logits(logits, action, reduction="none")
            per = per * mask.unsqueeze(-1)
            return per.sum(), mask.sum() * self.config.k
        classes = (action.long() * self.bit_weights).sum(dim=-1)
        per = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), classes.reshape(-1), reduction="none"
        ).reshape(mask.shape)
        per = per * mask
        return per.sum(), mask.sum()

    def decode_bits(self, logits: torch.Tensor) -> tuple[int, ...]:
        """One position's logits -> 0/1 mask (sigmoid > 0.5, or argmax in joint mode)."""
        if self.config.action_head == "factored":
            return tuple(int(v > 0) for v in logits.tolist())
        index = int(torch.argmax(logits))
        return tuple((index >> i) & 1 for i in range(self.config.k))


def save_checkpoint(
    model: ReturnConditionedTransformer, directory: str | Path, training: dict | None = None
) -> Path:
    """Write ``config.json`` (manifest) and ``weights.pt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"model": model.config.to_dict(), "training": dict(training or {})}
    (directory / CONFIG_FILENAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    torch.save(model.state_dict(), directory / WEIGHTS_FILENAME)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ReturnConditionedTransformer, ModelConfig]:
    """Rebuild the model from a checkpoint directory; returns it in eval mode."""
    directory = Path(directory)
    config_path = directory / CONFIG_FILENAME
    weights_path = directory / WEIGHTS_FILENAME
    for path in (config_path, weights_path):
        if not path.is_file():
            raise CheckpointError(f"checkpoint file missing: {path}")
    try:
        manifest = json.loads(config_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"invalid manifest {config_path}: {exc}") from exc
    if not isinstance(manifest, dict) or "model" not in manifest:
        raise CheckpointError(f"manifest {config_path} missing 'model' section")
    config = ModelConfig.from_dict(manifest["model"])
    model = ReturnConditionedTransformer(config)
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except (RuntimeError, ValueError, EOFError) as exc:
        raise CheckpointError(f"cannot load weights {weights_path}: {exc}") from exc
    model.eval()
    return model, config
