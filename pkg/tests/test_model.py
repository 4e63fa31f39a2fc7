import numpy as np
import pytest

from modelpress import (
    ModelConfig,
    detokenize_bytes,
    generate_toy_model,
    load_checkpoint,
    perplexity,
    save_checkpoint,
    tokenize_bytes,
)
from modelpress.model import PRUNABLE_MODULES, prunable_names

from conftest import CTX

SMALL = ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, max_seq=32)


class TestModelConfig:
    def test_heads_must_divide_d_model(self):
        with pytest.raises(ValueError, match="divide"):
            ModelConfig(n_layers=1, d_model=10, n_heads=3, d_ff=8)

    def test_vocab_fixed_at_256(self):
        with pytest.raises(ValueError, match="256"):
            ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=8, vocab=100)

    @pytest.mark.parametrize("field", ["n_layers", "d_model", "n_heads", "d_ff", "max_seq"])
    def test_counts_must_be_positive(self, field):
        kwargs = dict(n_layers=1, d_model=8, n_heads=2, d_ff=8, max_seq=16)
        kwargs[field] = 0
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)

    def test_metadata_round_trip(self):
        assert ModelConfig.from_metadata({k: str(v) for k, v in SMALL.to_metadata().items()}) == SMALL


class TestGenerateToyModel:
    def test_deterministic_for_same_seed(self):
        a = generate_toy_model(SMALL, 11)
        b = generate_toy_model(SMALL, 11)
        assert list(a.tensors) == list(b.tensors)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_different_seeds_differ(self):
        a = generate_toy_model(SMALL, 1)
        b = generate_toy_model(SMALL, 2)
        assert any(not np.array_equal(a.tensors[n], b.tensors[n]) for n in a.tensors)

    def test_single_layer_config_works(self):
        cfg = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=8, max_seq=16)
        ckpt = generate_toy_model(cfg, 0)
        ckpt.validate()

    def test_depth_scale_varies_across_layers(self):
        cfg = ModelConfig(n_layers=5, d_model=16, n_heads=4, d_ff=16, max_seq=16)
        ckpt = generate_toy_model(cfg, 3)
        stds = [ckpt.tensors[f"L{l}.Wv"].std() for l in range(5)]
        # middle layers start wider than the ends
        assert stds[2] > stds[0]
        assert stds[2] > stds[4]

    def test_fixture_ppl_is_finite_and_above_one(self, model8, corpus, kv16_8):
        ppl = perplexity(model8, corpus[:256], kv16_8, CTX)
        assert np.isfinite(ppl)
        assert ppl > 1.0

    def test_prunable_names_cover_six_matrices_per_layer(self):
        names = prunable_names(SMALL)
        assert len(names) == 2 * len(PRUNABLE_MODULES)
        assert names[0] == "L0.Wq"


class TestCheckpointIO:
    def test_save_load_round_trip_bitwise(self, tmp_path):
        ckpt = generate_toy_model(SMALL, 5)
        path = tmp_path / "m.opsc"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.config == ckpt.config
        for name in ckpt.tensors:
            np.testing.assert_array_equal(
                loaded.tensors[name].view(np.uint32), ckpt.tensors[name].view(np.uint32)
            )

    def test_save_load_save_identical_bytes(self, tmp_path):
        ckpt = generate_toy_model(SMALL, 5)
        first, second = tmp_path / "a.opsc", tmp_path / "b.opsc"
        save_checkpoint(ckpt, first)
        save_checkpoint(load_checkpoint(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_missing_tensor_rejected(self, tmp_path):
        ckpt = generate_toy_model(SMALL, 5)
        broken = dict(ckpt.tensors)
        del broken["L0.Wq"]
        from modelpress.model import Checkpoint

        with pytest.raises(ValueError, match="missing tensor"):
            Checkpoint(config=SMALL, tensors=broken).validate()

    def test_wrong_shape_rejected(self):
        ckpt = generate_toy_model(SMALL, 5)
        bad = dict(ckpt.tensors)
        bad["head"] = bad["head"][:, :100]
        from modelpress.model import Checkpoint

        with pytest.raises(ValueError, match="shape"):
            Checkpoint(config=SMALL, tensors=bad).validate()


class TestTokenizer:
    def test_empty_string(self):
        assert tokenize_bytes("").tolist() == []

    def test_ascii_identity(self):
        assert tokenize_bytes("A").tolist() == [65]

    @pytest.mark.parametrize(
        "text",
        ["hello", "naive café", "tabs\tand\nnewlines", "snowman ☃ and emoji \U0001f914", ""],
    )
    def test_round_trip_is_identity(self, text):
        assert detokenize_bytes(tokenize_bytes(text)) == text

    def test_round_trip_random_unicode(self, rng):
        alphabet = "abcdefghij \n\tàéîõü☃\U0001f600"
        for _ in range(25):
            s = "".join(rng.choice(list(alphabet)) for _ in range(rng.integers(0, 60)))
            assert detokenize_bytes(tokenize_bytes(s)) == s

    def test_tokens_are_bytes_not_chars(self):
        assert tokenize_bytes("é").tolist() == [0xC3, 0xA9]
