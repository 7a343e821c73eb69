"""Architecture: config checks, causal masking, loss terms, checkpoints."""

import json

import pytest
import torch
import torch.nn.functional as F

from dtagent import (
    CheckpointError,
    ModelConfig,
    ReturnConditionedTransformer,
    load_checkpoint,
    save_checkpoint,
)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(k=3, context_steps=6, embed_dim=32, num_layers=2, num_heads=2, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def random_batch(config: ModelConfig, batch: int = 4, seed: int = 0):
    gen = torch.Generator().manual_seed(seed)
    bounds = torch.randint(0, 3, (batch, config.k), generator=gen).float()
    rtg = -torch.randint(1, 7, (batch, config.context_steps), generator=gen).float()
    state = torch.randint(0, 4, (batch, config.context_steps), generator=gen).float()
    action = torch.randint(0, 2, (batch, config.context_steps, config.k), generator=gen).float()
    return bounds, rtg, state, action


class TestModelConfig:
    @pytest.mark.parametrize(
        "overrides, fragment",
        [
            (dict(k=0), "k must be >= 1"),
            (dict(context_steps=0), "context_steps must be >= 1"),
            (dict(embed_dim=0), "must be >= 1"),
            (dict(embed_dim=30, num_heads=4), "not divisible"),
            (dict(action_head="soft"), "action_head must be one of"),
            (dict(action_head="joint", k=5), "joint action head supports k <= 4"),
            (dict(learning_rate=0.0), "learning_rate must be positive"),
            (dict(batch_size=0), "batch_size and epochs"),
            (dict(epochs=0), "batch_size and epochs"),
        ],
    )
    def test_rejects_bad_fields(self, overrides, fragment):
        with pytest.raises(ValueError, match=fragment):
            tiny_config(**overrides)

    def test_token_accounting(self):
        config = tiny_config()
        assert config.prefix_tokens == 3
        assert config.max_tokens == 3 + 3 * 6
        assert tiny_config(bounds_prefix=False).max_tokens == 3 * 6

    def test_action_classes(self):
        assert tiny_config().action_classes == 3
        assert tiny_config(action_head="joint").action_classes == 8

    def test_dict_round_trip(self):
        config = tiny_config(action_head="joint", bounds_prefix=False, epochs=7)
        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_from_dict_rejects_unknown_and_missing(self):
        good = tiny_config().to_dict()
        extra = dict(good, surprise=1)
        with pytest.raises(CheckpointError, match="unknown \\['surprise'\\]"):
            ModelConfig.from_dict(extra)
        del good["k"]
        with pytest.raises(CheckpointError, match="missing \\['k'\\]"):
            ModelConfig.from_dict(good)

    def test_from_dict_rejects_invalid_values(self):
        bad = tiny_config().to_dict()
        bad["num_heads"] = 5
        with pytest.raises(CheckpointError, match="invalid model config"):
            ModelConfig.from_dict(bad)


class TestForward:
    @pytest.mark.parametrize("bounds_prefix", [True, False])
    @pytest.mark.parametrize("action_head", ["factored", "joint"])
    def test_output_shape(self, bounds_prefix, action_head):
        config = tiny_config(bounds_prefix=bounds_prefix, action_head=action_head)
        torch.manual_seed(0)
        model = ReturnConditionedTransformer(config)
        logits = model(*random_batch(config))
        assert logits.shape == (4, config.context_steps, config.action_classes)

    def test_rejects_wrong_step_count(self):
        config = tiny_config()
        model = ReturnConditionedTransformer(config)
        bounds, rtg, state, action = random_batch(config)
        with pytest.raises(ValueError, match="expected 6 steps"):
            model(bounds, rtg[:, :5], state[:, :5], action[:, :5])

    def test_deterministic_inference(self):
        config = tiny_config()
        torch.manual_seed(3)
        model = ReturnConditionedTransformer(config).eval()
        batch = random_batch(config)
        with torch.no_grad():
            first = model(*batch)
            second = model(*batch)
        assert torch.equal(first, second)

    def test_seeded_construction_is_reproducible(self):
        config = tiny_config()
        torch.manual_seed(9)
        one = ReturnConditionedTransformer(config)
        torch.manual_seed(9)
        two = ReturnConditionedTransformer(config)
        for a, b in zip(one.state_dict().values(), two.state_dict().values()):
            assert torch.equal(a, b)

    @pytest.mark.parametrize("bounds_prefix", [True, False])
    def test_causality_future_tokens_cannot_move_past_logits(self, bounds_prefix):
        config = tiny_config(bounds_prefix=bounds_prefix)
        torch.manual_seed(1)
        model = ReturnConditionedTransformer(config).eval()
        bounds, rtg, state, action = random_batch(config)
        with torch.no_grad():
            base = model(bounds, rtg, state, action)
        cut = 3  # perturb everything after step `cut`, including its own action
        rtg2, state2, action2 = rtg.clone(), state.clone(), action.clone()
        rtg2[:, cut + 1 :] += 5.0
        state2[:, cut + 1 :] += 7.0
        action2[:, cut:] = 1.0 - action2[:, cut:]
        with torch.no_grad():
            moved = model(bounds, rtg2, state2, action2)
        assert torch.equal(base[:, : cut + 1], moved[:, : cut + 1])
        assert not torch.equal(base[:, cut + 1 :], moved[:, cut + 1 :])

    def test_bounds_prefix_feeds_every_position(self):
        config = tiny_config()
        torch.manual_seed(2)
        model = ReturnConditionedTransformer(config).eval()
        bounds, rtg, state, action = random_batch(config)
        with torch.no_grad():
            base = model(bounds, rtg, state, action)
            moved = model(bounds + 1.0, rtg, state, action)
        assert not torch.equal(base[:, 0], moved[:, 0])

    def test_prefix_free_model_ignores_bounds(self):
        config = tiny_config(bounds_prefix=False)
        torch.manual_seed(2)
        model = ReturnConditionedTransformer(config).eval()
        bounds, rtg, state, action = random_batch(config)
        with torch.no_grad():
            base = model(bounds, rtg, state, action)
            moved = model(bounds + 9.0, rtg, state, action)
        assert torch.equal(base, moved)


class TestLossTerms:
    def test_factored_matches_manual_bce(self):
        config = tiny_config(k=2, context_steps=2)
        torch.manual_seed(4)
        model = ReturnConditionedTransformer(config)
        logits = torch.randn(3, 2, 2)
        action = torch.randint(0, 2, (3, 2, 2)).float()
        mask = torch.tensor([[True, True], [True, False], [False, False]])
        total, count = model.action_loss_terms(logits, action, mask)
        manual = F.binary_cross_entropy_with_logits(logits, action, reduction="none")
        expected = manual[0].sum() + manual[1, 0].sum()
        assert torch.allclose(total, expected)
        assert int(count) == 3 * 2  # three real steps, two bits each

    def test_masked_targets_do_not_contribute(self):
        config = tiny_config(k=2, context_steps=2)
        model = ReturnConditionedTransformer(config)
        logits = torch.randn(2, 2, 2)
        action = torch.zeros(2, 2, 2)
        mask = torch.tensor([[True, False], [True, False]])
        total, _ = model.action_loss_terms(logits, action, mask)
        tampered = action.clone()
        tampered[:, 1] = 1.0
        total2, _ = model.action_loss_terms(logits, tampered, mask)
        assert torch.equal(total, total2)

    def test_joint_matches_manual_cross_entropy(self):
        config = tiny_config(k=2, context_steps=2, action_head="joint")
        torch.manual_seed(5)
        model = ReturnConditionedTransformer(config)
        logits = torch.randn(2, 2, 4)
        # bit i carries weight 2^i: (0,1) -> class 2, (1,1) -> class 3
        action = torch.tensor([[[0.0, 1.0], [1.0, 1.0]], [[1.0, 0.0], [0.0, 0.0]]])
        mask = torch.tensor([[True, True], [True, False]])
        total, count = model.action_loss_terms(logits, action, mask)
        per = F.cross_entropy(logits.reshape(-1, 4), torch.tensor([2, 3, 1, 0]), reduction="none")
        assert torch.allclose(total, per[0] + per[1] + per[2])
        assert int(count) == 3

    def test_decode_bits_factored_thresholds_at_half(self):
        model = ReturnConditionedTransformer(tiny_config(k=3, context_steps=2))
        assert model.decode_bits(torch.tensor([0.2, -0.3, 0.0])) == (1, 0, 0)
        assert model.decode_bits(torch.zeros(3)) == (0, 0, 0)

    def test_decode_bits_joint_takes_argmax(self):
        model = ReturnConditionedTransformer(
            tiny_config(k=3, context_steps=2, action_head="joint")
        )
        logits = torch.full((8,), -1.0)
        logits[5] = 2.0  # binary 101 -> bits (1, 0, 1)
        assert model.decode_bits(logits) == (1, 0, 1)


class TestCheckpoint:
    def test_round_trip_preserves_outputs(self, tmp_path):
        config = tiny_config()
        torch.manual_seed(6)
        model = ReturnConditionedTransformer(config).eval()
        save_checkpoint(model, tmp_path / "ckpt", {"episodes": 5})
        loaded, loaded_config = load_checkpoint(tmp_path / "ckpt")
        assert loaded_config == config
        assert not loaded.training
        batch = random_batch(config)
        with torch.no_grad():
            assert torch.equal(model(*batch), loaded(*batch))

    def test_manifest_layout(self, tmp_path):
        config = tiny_config()
        model = ReturnConditionedTransformer(config)
        save_checkpoint(model, tmp_path / "ckpt", {"episodes": 5})
        manifest = json.loads((tmp_path / "ckpt" / "config.json").read_text())
        assert manifest["model"] == config.to_dict()
        assert manifest["training"] == {"episodes": 5}

    def test_missing_files(self, tmp_path):
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(tmp_path / "nowhere")
        (tmp_path / "half").mkdir()
        (tmp_path / "half" / "config.json").write_text("{}")
        with pytest.raises(CheckpointError, match="weights.pt"):
            load_checkpoint(tmp_path / "half")

    def test_corrupt_manifest(self, tmp_path):
        model = ReturnConditionedTransformer(tiny_config())
        save_checkpoint(model, tmp_path / "ckpt")
        (tmp_path / "ckpt" / "config.json").write_text("{broken")
        with pytest.raises(CheckpointError, match="invalid manifest"):
            load_checkpoint(tmp_path / "ckpt")

    def test_manifest_without_model_section(self, tmp_path):
        model = ReturnConditionedTransformer(tiny_config())
        save_checkpoint(model, tmp_path / "ckpt")
        (tmp_path / "ckpt" / "config.json").write_text(json.dumps({"training": {}}))
        with pytest.raises(CheckpointError, match="missing 'model' section"):
            load_checkpoint(tmp_path / "ckpt")

    def test_weights_config_mismatch(self, tmp_path):
        save_checkpoint(ReturnConditionedTransformer(tiny_config()), tmp_path / "ckpt")
        other = tiny_config(embed_dim=64)
        manifest = {"model": other.to_dict(), "training": {}}
        (tmp_path / "ckpt" / "config.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="cannot load weights"):
            load_checkpoint(tmp_path / "ckpt")
