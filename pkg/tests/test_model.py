"""Attention kinds, mixture-of-experts, layer composition, and the
language-model objective.

The forward-pass oracle here is a deliberately plain numpy
re-implementation (explicit loops, no shared code with the package) so
model outputs are checked against an independent reading of the
architecture.
"""

import math

import numpy as np
import pytest

from longsum import autodiff as ad
from longsum.autodiff import Tensor, backward, parameter
from longsum.errors import DataError
from longsum.model import (
    AttentionInstrumentation,
    ModelConfig,
    MoEConfig,
    TransformerDecoderModel,
    compressed_mask,
    causal_mask,
    load_model_config,
    save_model_config,
)

RNG = np.random.default_rng(7)


def tiny_config(**kwargs):
    defaults = dict(
        vocab_size=17,
        layer_pattern="LML",
        d_model=16,
        num_heads=4,
        d_ff=32,
        max_len=64,
        block_size=4,
        seed=11,
    )
    defaults.update(kwargs)
    return ModelConfig(**defaults)


def random_ids(n, vocab_size, rng=RNG):
    return [int(t) for t in rng.integers(3, vocab_size, n)]


class TestScaledDotAttention:
    def test_single_pair_returns_value_row(self):
        q = Tensor(RNG.normal(size=(1, 4)))
        k = Tensor(RNG.normal(size=(1, 4)))
        v = Tensor(RNG.normal(size=(1, 6)))
        out = ad.scaled_dot_attention(q, k, v, np.ones((1, 1), dtype=bool))
        np.testing.assert_allclose(out.values, v.values)

    def test_equal_logits_average_unmasked_values(self):
        q = Tensor(np.zeros((1, 4)))  # zero query -> all logits equal
        k = Tensor(RNG.normal(size=(3, 4)))
        v = Tensor(RNG.normal(size=(3, 2)))
        mask = np.array([[True, True, False]])
        out = ad.scaled_dot_attention(q, k, v, mask)
        np.testing.assert_allclose(out.values[0], v.values[:2].mean(axis=0))

    def test_two_by_two_hand_fixture(self):
        q = np.array([[1.0, 0.0], [0.0, 2.0]])
        k = np.array([[1.0, 1.0], [0.0, 1.0]])
        v = np.array([[1.0, 2.0], [3.0, 4.0]])
        scores = q @ k.T / math.sqrt(2)
        expected = np.zeros((2, 2))
        for i in range(2):
            row = np.exp(scores[i] - scores[i].max())
            expected[i] = (row / row.sum()) @ v
        out = ad.scaled_dot_attention(
            Tensor(q), Tensor(k), Tensor(v), np.ones((2, 2), dtype=bool)
        )
        np.testing.assert_allclose(out.values, expected, atol=1e-12)

    def test_fully_masked_query_gets_zero_vector(self):
        q = Tensor(RNG.normal(size=(2, 3)))
        k = Tensor(RNG.normal(size=(2, 3)))
        v = Tensor(RNG.normal(size=(2, 5)))
        mask = np.array([[False, False], [True, True]])
        out = ad.scaled_dot_attention(q, k, v, mask)
        np.testing.assert_array_equal(out.values[0], 0.0)


def _sublayer(model, x_values, kind, layer_index=0, instr=None):
    return model.attention_sublayer(Tensor(x_values), layer_index, kind, instr)


class TestFullAttention:
    def test_position_zero_depends_only_on_token_zero(self):
        model = TransformerDecoderModel(tiny_config(layer_pattern="F"))
        x = RNG.normal(size=(6, 16))
        base = _sublayer(model, x, "F").values
        perturbed = x.copy()
        perturbed[1:] += RNG.normal(size=(5, 16))
        again = _sublayer(model, perturbed, "F").values
        np.testing.assert_array_equal(base[0], again[0])

    def test_perturbation_only_affects_later_positions(self):
        model = TransformerDecoderModel(tiny_config(layer_pattern="F"))
        x = RNG.normal(size=(8, 16))
        t = 5
        perturbed = x.copy()
        perturbed[t] += 1.0
        a = _sublayer(model, x, "F").values
        b = _sublayer(model, perturbed, "F").values
        np.testing.assert_array_equal(a[:t], b[:t])
        assert not np.allclose(a[t:], b[t:])

    def test_score_entry_count(self):
        model = TransformerDecoderModel(tiny_config(layer_pattern="F"))
        instr = AttentionInstrumentation()
        _sublayer(model, RNG.normal(size=(10, 16)), "F", instr=instr)
        assert instr.per_head(0) == 10 * 11 // 2


class TestLocalAttention:
    def test_block_covering_sequence_equals_full(self):
        cfg = tiny_config(layer_pattern="L", block_size=64)
        model = TransformerDecoderModel(cfg)
        x = RNG.normal(size=(12, 16))
        local = _sublayer(model, x, "L").values
        full = _sublayer(model, x, "F").values
        np.testing.assert_allclose(local, full, atol=1e-10)

    def test_no_cross_block_attention(self):
        cfg = tiny_config(layer_pattern="L", block_size=8, max_len=32)
        model = TransformerDecoderModel(cfg)
        x = RNG.normal(size=(16, 16))
        perturbed = x.copy()
        perturbed[:8] += RNG.normal(size=(8, 16))
        a = _sublayer(model, x, "L").values
        b = _sublayer(model, perturbed, "L").values
        # second block (positions 8..15) is independent of the first
        np.testing.assert_array_equal(a[8:], b[8:])

    def test_score_entry_count_bounded_by_n_times_block(self):
        cfg = tiny_config(layer_pattern="L", block_size=256, max_len=1024, d_model=8, num_heads=2)
        model = TransformerDecoderModel(cfg)
        instr = AttentionInstrumentation()
        _sublayer(model, RNG.normal(size=(1000, 8)), "L", instr=instr)
        blocks = [256, 256, 256, 232]
        assert instr.per_head(0) == sum(b * (b + 1) // 2 for b in blocks)
        assert instr.per_head(0) <= 1000 * 256


class TestMemoryCompressedAttention:
    def test_identity_compression_equals_full(self):
        cfg = tiny_config(layer_pattern="M", compress_kernel=1, compress_stride=1)
        model = TransformerDecoderModel(cfg)
        eye = np.eye(16)[None, :, :]
        model.params["layer0.attn.conv_k"].values[...] = eye
        model.params["layer0.attn.conv_v"].values[...] = eye
        x = RNG.normal(size=(9, 16))
        compressed = _sublayer(model, x, "M").values
        full = _sublayer(model, x, "F").values
        np.testing.assert_allclose(compressed, full, atol=1e-10)

    def test_slot_admissibility_rule(self):
        mask = compressed_mask(n_queries=7, n_slots=3, kernel=3, stride=3)
        # slot 0 covers 0..2: first admissible for query 2
        np.testing.assert_array_equal(mask[:, 0], [False, False, True, True, True, True, True])
        # slot 1 covers 3..5: first admissible for query 5
        np.testing.assert_array_equal(mask[:, 1], [False] * 5 + [True, True])
        # slot 2 covers position 6 plus padding: admissible for query 6
        np.testing.assert_array_equal(mask[:, 2], [False] * 6 + [True])

    def test_early_queries_get_zero_attention_output(self):
        cfg = tiny_config(layer_pattern="M")
        model = TransformerDecoderModel(cfg)
        p = "layer0.attn"
        model.params[f"{p}.bo"].values[...] = 0.0  # isolate the attention path
        x = RNG.normal(size=(7, 16))
        out = _sublayer(model, x, "M").values
        # queries 0 and 1 precede every slot's last covered position
        np.testing.assert_array_equal(out[:2], 0.0)
        assert np.abs(out[2:]).max() > 0

    def test_score_entry_count_is_queries_times_slots(self):
        cfg = tiny_config(layer_pattern="M", d_model=8, num_heads=2, max_len=512)
        model = TransformerDecoderModel(cfg)
        instr = AttentionInstrumentation()
        _sublayer(model, RNG.normal(size=(300, 8)), "M", instr=instr)
        assert instr.per_head(0) == 300 * math.ceil(300 / 3)
        assert instr.per_head(0) < 300 * 300  # compression beats the full product


class TestMixtureOfExperts:
    def test_single_expert_equals_feed_forward(self):
        cfg = tiny_config(
            layer_pattern="LML", moe=MoEConfig(num_experts=1, top_k=1, replace_layer_index=1)
        )
        model = TransformerDecoderModel(cfg)
        x = Tensor(RNG.normal(size=(5, 16)))
        moe_out = model.moe_ffn(x, 1).values
        p = "layer1.moe.expert0"
        hidden = np.maximum(
            x.values @ model.params[f"{p}.w1"].values + model.params[f"{p}.b1"].values, 0.0
        )
        dense = hidden @ model.params[f"{p}.w2"].values + model.params[f"{p}.b2"].values
        np.testing.assert_array_equal(moe_out, dense)

    def test_top2_of_four_matches_dense_oracle(self):
        cfg = tiny_config(
            layer_pattern="L", moe=MoEConfig(num_experts=4, top_k=2, replace_layer_index=0)
        )
        model = TransformerDecoderModel(cfg)
        x = RNG.normal(size=(6, 16))
        out = model.moe_ffn(Tensor(x), 0).values

        P = {k: t.values for k, t in model.params.items()}
        logits = x @ P["layer0.moe.gate.w"] + P["layer0.moe.gate.b"]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        gate = e / e.sum(axis=1, keepdims=True)
        expected = np.zeros_like(x)
        for pos in range(x.shape[0]):
            top2 = np.argsort(-gate[pos], kind="stable")[:2]
            weights = gate[pos, top2] / gate[pos, top2].sum()
            for weight, expert in zip(weights, top2):
                q = f"layer0.moe.expert{expert}"
                hidden = np.maximum(x[pos] @ P[f"{q}.w1"] + P[f"{q}.b1"], 0.0)
                expected[pos] += weight * (hidden @ P[f"{q}.w2"] + P[f"{q}.b2"])
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_forced_one_hot_gate_selects_single_expert(self):
        cfg = tiny_config(
            layer_pattern="L", moe=MoEConfig(num_experts=3, top_k=1, replace_layer_index=0)
        )
        model = TransformerDecoderModel(cfg)
        model.params["layer0.moe.gate.w"].values[...] = 0.0
        model.params["layer0.moe.gate.b"].values[...] = np.array([0.0, 50.0, 0.0])
        x = RNG.normal(size=(4, 16))
        out = model.moe_ffn(Tensor(x), 0).values
        q = "layer0.moe.expert1"
        P = {k: t.values for k, t in model.params.items()}
        hidden = np.maximum(x @ P[f"{q}.w1"] + P[f"{q}.b1"], 0.0)
        np.testing.assert_allclose(out, hidden @ P[f"{q}.w2"] + P[f"{q}.b2"], atol=1e-12)

    def test_gradient_through_gate(self):
        cfg = tiny_config(
            layer_pattern="L",
            d_model=4,
            num_heads=2,
            d_ff=8,
            vocab_size=9,
            moe=MoEConfig(num_experts=3, top_k=2, replace_layer_index=0),
        )
        model = TransformerDecoderModel(cfg)
        ids = random_ids(6, 9)
        gate = model.params["layer0.moe.gate.w"]

        def fn():
            return model.loss(ids, 2)

        loss = fn()
        backward(loss)
        analytic = gate.grad.copy()
        eps = 1e-5
        flat = gate.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(analytic.reshape(-1)[i]), 1e-3)
            assert abs(numeric - analytic.reshape(-1)[i]) / denom < 1e-6


class TestDecoderLayer:
    def test_zeroed_output_projections_reduce_to_layer_norm(self):
        model = TransformerDecoderModel(tiny_config(layer_pattern="F"))
        for name in ("attn.wo", "attn.bo", "ffn.w2", "ffn.b2"):
            model.params[f"layer0.{name}"].values[...] = 0.0
        x = RNG.normal(size=(5, 16))
        out = model.decoder_layer(Tensor(x), 0, "F").values
        expected = ad.layer_norm(
            Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))
        ).values
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_causality_through_full_layer(self):
        model = TransformerDecoderModel(tiny_config(layer_pattern="M"))
        x = RNG.normal(size=(9, 16))
        perturbed = x.copy()
        perturbed[6:] += 2.0
        a = model.decoder_layer(Tensor(x), 0, "M").values
        b = model.decoder_layer(Tensor(perturbed), 0, "M").values
        np.testing.assert_array_equal(a[:6], b[:6])

    def test_matches_manual_sublayer_composition(self):
        model = TransformerDecoderModel(tiny_config(layer_pattern="L"))
        x = Tensor(RNG.normal(size=(7, 16)))
        composed = ad.layer_norm(
            ad.add(x, model.attention_sublayer(x, 0, "L")),
            model.params["layer0.ln1.gain"],
            model.params["layer0.ln1.bias"],
        )
        composed = ad.layer_norm(
            ad.add(composed, model.feed_forward(composed, 0)),
            model.params["layer0.ln2.gain"],
            model.params["layer0.ln2.bias"],
        )
        out = model.decoder_layer(x, 0, "L").values
        np.testing.assert_array_equal(out, composed.values)


# ---------------------------------------------------------------------------
# independent straight-line forward oracle


def oracle_positional(max_len, d):
    pe = np.zeros((max_len, d))
    for pos in range(max_len):
        for i in range(d):
            angle = pos / (10000 ** ((2 * (i // 2)) / d))
            pe[pos, i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return pe


def oracle_softmax(scores, mask):
    out = np.zeros_like(scores)
    for i in range(scores.shape[0]):
        admissible = np.where(mask[i])[0]
        if admissible.size == 0:
            continue
        row = scores[i, admissible]
        e = np.exp(row - row.max())
        out[i, admissible] = e / e.sum()
    return out


def oracle_layer_norm(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def oracle_forward(model, ids):
    cfg = model.config
    P = {k: t.values for k, t in model.params.items()}
    d, h = cfg.d_model, cfg.num_heads
    dk = d // h
    n = len(ids)
    pe = oracle_positional(cfg.max_len, d)
    x = P["embed.table"][np.asarray(ids)] * math.sqrt(d) + pe[:n]

    for li, kind in enumerate(cfg.layer_pattern):
        p = f"layer{li}.attn"
        q = x @ P[f"{p}.wq"] + P[f"{p}.bq"]
        k = x @ P[f"{p}.wk"] + P[f"{p}.bk"]
        v = x @ P[f"{p}.wv"] + P[f"{p}.bv"]
        if kind == "M":
            stride, kw = cfg.compress_stride, cfg.compress_kernel
            n_slots = math.ceil(n / stride)
            pad = np.zeros(((n_slots - 1) * stride + kw, d))
            k_c = np.zeros((n_slots, d))
            v_c = np.zeros((n_slots, d))
            pad[:n] = k
            for j in range(n_slots):
                for t in range(kw):
                    k_c[j] += pad[j * stride + t] @ P[f"{p}.conv_k"][t]
            pad[:] = 0.0
            pad[:n] = v
            for j in range(n_slots):
                for t in range(kw):
                    v_c[j] += pad[j * stride + t] @ P[f"{p}.conv_v"][t]
            k, v = k_c, v_c
            last = np.minimum(np.arange(n_slots) * stride + kw - 1, n - 1)
            mask = last[None, :] <= np.arange(n)[:, None]
        elif kind == "F":
            mask = np.tril(np.ones((n, n), dtype=bool))
        else:
            mask = np.zeros((n, n), dtype=bool)
            for start in range(0, n, cfg.block_size):
                stop = min(start + cfg.block_size, n)
                for i in range(start, stop):
                    mask[i, start : i + 1] = True
        heads = []
        for head in range(h):
            qs = q[:, head * dk : (head + 1) * dk]
            ks = k[:, head * dk : (head + 1) * dk]
            vs = v[:, head * dk : (head + 1) * dk]
            weights = oracle_softmax(qs @ ks.T / math.sqrt(dk), mask)
            heads.append(weights @ vs)
        attn = np.concatenate(heads, axis=1) @ P[f"{p}.wo"] + P[f"{p}.bo"]
        x = oracle_layer_norm(x + attn, P[f"layer{li}.ln1.gain"], P[f"layer{li}.ln1.bias"])
        f = f"layer{li}.ffn"
        ffn = np.maximum(x @ P[f"{f}.w1"] + P[f"{f}.b1"], 0.0) @ P[f"{f}.w2"] + P[f"{f}.b2"]
        x = oracle_layer_norm(x + ffn, P[f"layer{li}.ln2.gain"], P[f"layer{li}.ln2.bias"])
    return x @ P["out.w"] + P["out.b"]


class TestForwardLM:
    @pytest.mark.parametrize("pattern", ["F", "L", "M", "LMLML"])
    def test_causality_under_suffix_replacement(self, pattern):
        cfg = tiny_config(layer_pattern=pattern, block_size=3)
        model = TransformerDecoderModel(cfg)
        ids = random_ids(11, cfg.vocab_size)
        t = 6
        replaced = list(ids)
        for j in range(t + 1, len(ids)):
            replaced[j] = 3 + (ids[j] - 3 + 5) % (cfg.vocab_size - 3)
        a = model.forward_lm(ids).values
        b = model.forward_lm(replaced).values
        np.testing.assert_array_equal(a[: t + 1], b[: t + 1])

    def test_deterministic_given_seed(self):
        cfg = tiny_config()
        ids = random_ids(9, cfg.vocab_size)
        a = TransformerDecoderModel(cfg).forward_lm(ids).values
        b = TransformerDecoderModel(cfg).forward_lm(ids).values
        np.testing.assert_array_equal(a, b)

    def test_matches_straight_line_numpy_oracle(self):
        cfg = tiny_config(layer_pattern="FLM", block_size=3, d_model=8, num_heads=2, d_ff=12)
        model = TransformerDecoderModel(cfg)
        ids = random_ids(10, cfg.vocab_size)
        ours = model.forward_lm(ids).values
        theirs = oracle_forward(model, ids)
        np.testing.assert_allclose(ours, theirs, atol=1e-10)

    def test_empty_and_overlong_sequences_error(self):
        model = TransformerDecoderModel(tiny_config(max_len=8))
        with pytest.raises(DataError):
            model.forward_lm([])
        with pytest.raises(DataError):
            model.forward_lm(random_ids(9, 17))

    def test_out_of_vocab_id_errors(self):
        model = TransformerDecoderModel(tiny_config())
        with pytest.raises(DataError):
            model.forward_lm([3, 99])


class TestLoss:
    def test_scope_masks_differ_on_input_positions(self):
        from longsum.metrics import scope_mask

        all_mask = scope_mask(10, 4, "all_positions")
        out_mask = scope_mask(10, 4, "output_only")
        np.testing.assert_array_equal(all_mask[:4] ^ out_mask[:4], True)
        np.testing.assert_array_equal(all_mask[4:], out_mask[4:])

    def test_uniform_model_loss_is_log_vocab(self):
        cfg = tiny_config()
        model = TransformerDecoderModel(cfg)
        model.params["out.w"].values[...] = 0.0
        model.params["out.b"].values[...] = 0.0
        ids = random_ids(8, cfg.vocab_size)
        assert model.loss(ids, 3).item() == pytest.approx(math.log(cfg.vocab_size))

    def test_matches_externally_applied_cross_entropy(self):
        cfg = tiny_config()
        model = TransformerDecoderModel(cfg)
        ids = random_ids(9, cfg.vocab_size)
        logits = model.forward_lm(ids).values
        nlls = []
        for t in range(len(ids) - 1):
            row = logits[t]
            nlls.append(math.log(np.exp(row).sum()) - row[ids[t + 1]])
        assert model.loss(ids, 4).item() == pytest.approx(np.mean(nlls))
        assert model.loss(ids, 4, scope="output_only").item() == pytest.approx(
            np.mean(nlls[4:])
        )


class TestModelConfig:
    def test_invalid_pattern_rejected(self):
        with pytest.raises(DataError):
            tiny_config(layer_pattern="LXL")

    def test_head_divisibility_enforced(self):
        with pytest.raises(DataError):
            tiny_config(d_model=10, num_heads=4)

    def test_kernel_stride_ordering_enforced(self):
        with pytest.raises(DataError):
            tiny_config(compress_kernel=2, compress_stride=3)

    def test_moe_layer_index_bounds(self):
        with pytest.raises(DataError):
            tiny_config(moe=MoEConfig(num_experts=2, top_k=1, replace_layer_index=5))

    def test_dropout_hook_accepts_only_zero(self):
        assert tiny_config(dropout=0.0).dropout == 0.0
        with pytest.raises(DataError):
            tiny_config(dropout=0.1)

    def test_config_file_round_trip(self, tmp_path):
        cfg = tiny_config(moe=MoEConfig(num_experts=4, top_k=2, replace_layer_index=1))
        path = tmp_path / "model_config.txt"
        save_model_config(cfg, path)
        assert load_model_config(path) == cfg


class TestPersistence:
    def test_save_load_round_trip_is_bit_exact(self, tmp_path):
        cfg = tiny_config(moe=MoEConfig(num_experts=2, top_k=1, replace_layer_index=0))
        model = TransformerDecoderModel(cfg)
        ids = random_ids(7, cfg.vocab_size)
        before = model.forward_lm(ids).values
        model.save(tmp_path / "ck")
        restored = TransformerDecoderModel.load(tmp_path / "ck")
        for name, p in model.params.items():
            assert p.values.tobytes() == restored.params[name].values.tobytes()
        np.testing.assert_array_equal(before, restored.forward_lm(ids).values)
