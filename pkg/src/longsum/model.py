"""Decoder-only transformer over combined input/output sequences.

The layer pattern is a string over {F, L, M}: full causal
self-attention, block-local causal attention, and memory-compressed
attention whose keys/values are downsampled by a strided convolution.
Local layers attend within fixed-size consecutive blocks only (the last
block may be ragged); compressed layers let query i attend a compressed
slot only when the last original position the slot covers is <= i, so
no information leaks from the future through the convolution. One
feed-forward sublayer may be replaced by a top-k gated
mixture-of-experts.

Sublayers use post-norm residuals and sinusoidal position encodings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .checkpoint import load_arrays, save_arrays
from .errors import DataError
from .metrics import scope_mask

LAYER_KINDS = ("F", "L", "M")


@dataclass
class MoEConfig:
    num_experts: int = 4
    top_k: int = 2
    replace_layer_index: int | None = None  # None: middle layer of the stack

    def layer_index(self, num_layers: int) -> int:
        if self.replace_layer_index is None:
            return num_layers // 2
        return self.replace_layer_index


@dataclass
class ModelConfig:
    vocab_size: int
    layer_pattern: str = "LMLML"
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 256
    max_len: int = 512
    block_size: int = 256
    compress_kernel: int = 3
    compress_stride: int = 3
    moe: MoEConfig | None = None
    dropout: float = 0.0  # hook only; nonzero rates are rejected at this scale
    seed: int = 0

    def __post_init__(self):
        if not self.layer_pattern or any(c not in LAYER_KINDS for c in self.layer_pattern):
            raise DataError(f"layer pattern must be over {{F,L,M}}, got {self.layer_pattern!r}")
        if self.dropout != 0.0:
            raise DataError("dropout is a configuration hook; only rate 0.0 is supported")
        if self.d_model % self.num_heads != 0:
            raise DataError("d_model must be divisible by num_heads")
        if not (self.compress_kernel >= self.compress_stride >= 1):
            raise DataError("need compress_kernel >= compress_stride >= 1")
        if self.block_size < 1:
            raise DataError("block_size must be >= 1")
        if self.moe is not None:
            if self.moe.num_experts < 1 or self.moe.top_k < 1:
                raise DataError("mixture needs >= 1 expert and top_k >= 1")
            if self.moe.layer_index(len(self.layer_pattern)) >= len(self.layer_pattern):
                raise DataError("moe layer index out of range")


@dataclass
class LayerScoreCount:
    layer_index: int
    kind: str
    entries_per_head: int
    num_heads: int

    @property
    def total(self) -> int:
        return self.entries_per_head * self.num_heads


@dataclass
class AttentionInstrumentation:
    """Exact per-layer counts of attention score entries materialized.

    Full/local kernels only materialize causally admissible entries;
    the compressed kernel materializes the whole query-by-slot product
    (the strided convolution, not masking, is its savings mechanism).
    """

    layers: list[LayerScoreCount] = field(default_factory=list)

    def record(self, layer_index: int, kind: str, entries_per_head: int, num_heads: int):
        self.layers.append(LayerScoreCount(layer_index, kind, entries_per_head, num_heads))

    def per_head(self, layer_index: int) -> int:
        counts = [c.entries_per_head for c in self.layers if c.layer_index == layer_index]
        if not counts:
            raise KeyError(f"no record for layer {layer_index}")
        (count,) = counts
        return count


def sinusoidal_encoding(max_len: int, d_model: int) -> np.ndarray:
    positions = np.arange(max_len)[:, None]
    dims = np.arange(d_model)[None, :]
    angles = positions / np.power(10000.0, (2 * (dims // 2)) / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def compressed_mask(n_queries: int, n_slots: int, kernel: int, stride: int) -> np.ndarray:
    """Admissibility of compressed slots: slot j covers original
    positions [j*stride, j*stride + kernel - 1] (clipped to the
    sequence); query i may use it only if that last position is <= i."""
    last_covered = np.minimum(np.arange(n_slots) * stride + kernel - 1, n_queries - 1)
    return last_covered[None, :] <= np.arange(n_queries)[:, None]


class TransformerDecoderModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._pos = sinusoidal_encoding(config.max_len, config.d_model)
        self._init_params(np.random.default_rng(config.seed))

    # ------------------------------------------------------------------
    # parameters

    def _add(self, name: str, values: np.ndarray) -> None:
        self.params[name] = parameter(values)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d, dff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
        self._add("embed.table", rng.normal(0.0, d ** -0.5, (v, d)))
        moe_index = cfg.moe.layer_index(len(cfg.layer_pattern)) if cfg.moe else None
        for i, kind in enumerate(cfg.layer_pattern):
            p = f"layer{i}"
            for proj in ("wq", "wk", "wv", "wo"):
                self._add(f"{p}.attn.{proj}", rng.normal(0.0, d ** -0.5, (d, d)))
            for b in ("bq", "bk", "bv", "bo"):
                self._add(f"{p}.attn.{b}", np.zeros(d))
            if kind == "M":
                scale = (cfg.compress_kernel * d) ** -0.5
                self._add(f"{p}.attn.conv_k", rng.normal(0.0, scale, (cfg.compress_kernel, d, d)))
                self._add(f"{p}.attn.conv_v", rng.normal(0.0, scale, (cfg.compress_kernel, d, d)))
            self._add(f"{p}.ln1.gain", np.ones(d))
            self._add(f"{p}.ln1.bias", np.zeros(d))
            self._add(f"{p}.ln2.gain", np.ones(d))
            self._add(f"{p}.ln2.bias", np.zeros(d))
            if moe_index == i:
                assert cfg.moe is not None
                self._add(f"{p}.moe.gate.w", rng.normal(0.0, d ** -0.5, (d, cfg.moe.num_experts)))
                self._add(f"{p}.moe.gate.b", np.zeros(cfg.moe.num_experts))
                for e in range(cfg.moe.num_experts):
                    q = f"{p}.moe.expert{e}"
                    self._add(f"{q}.w1", rng.normal(0.0, d ** -0.5, (d, dff)))
                    self._add(f"{q}.b1", np.zeros(dff))
                    self._add(f"{q}.w2", rng.normal(0.0, dff ** -0.5, (dff, d)))
                    self._add(f"{q}.b2", np.zeros(d))
            else:
                self._add(f"{p}.ffn.w1", rng.normal(0.0, d ** -0.5, (d, dff)))
                self._add(f"{p}.ffn.b1", np.zeros(dff))
                self._add(f"{p}.ffn.w2", rng.normal(0.0, dff ** -0.5, (dff, d)))
                self._add(f"{p}.ffn.b2", np.zeros(d))
        self._add("out.w", rng.normal(0.0, d ** -0.5, (d, v)))
        self._add("out.b", np.zeros(v))

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.values.size for p in self.params.values())

    # ------------------------------------------------------------------
    # sublayers

    def _split_heads(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        h = self.config.num_heads
        return ad.transpose(ad.reshape(x, (n, h, x.shape[1] // h)), (1, 0, 2))

    def _merge_heads(self, x: Tensor) -> Tensor:
        h, n, dk = x.shape
        return ad.reshape(ad.transpose(x, (1, 0, 2)), (n, h * dk))

    def attention_sublayer(
        self,
        x: Tensor,
        layer_index: int,
        kind: str,
        instrumentation: AttentionInstrumentation | None = None,
    ) -> Tensor:
        cfg = self.config
        p = f"layer{layer_index}.attn"
        n = x.shape[0]
        q = ad.linear(x, self.params[f"{p}.wq"], self.params[f"{p}.bq"])
        k = ad.linear(x, self.params[f"{p}.wk"], self.params[f"{p}.bk"])
        v = ad.linear(x, self.params[f"{p}.wv"], self.params[f"{p}.bv"])

        if kind == "M":
            k = ad.strided_conv1d(k, self.params[f"{p}.conv_k"], cfg.compress_stride)
            v = ad.strided_conv1d(v, self.params[f"{p}.conv_v"], cfg.compress_stride)
            n_slots = k.shape[0]
            mask = compressed_mask(n, n_slots, cfg.compress_kernel, cfg.compress_stride)
            out = ad.scaled_dot_attention(
                self._split_heads(q), self._split_heads(k), self._split_heads(v), mask
            )
            entries = n * n_slots
        elif kind == "F":
            out = ad.scaled_dot_attention(
                self._split_heads(q), self._split_heads(k), self._split_heads(v), causal_mask(n)
            )
            entries = n * (n + 1) // 2
        elif kind == "L":
            qh, kh, vh = self._split_heads(q), self._split_heads(k), self._split_heads(v)
            outs = []
            entries = 0
            for start in range(0, n, cfg.block_size):
                stop = min(start + cfg.block_size, n)
                block = stop - start
                outs.append(
                    ad.scaled_dot_attention(
                        ad.slice_axis(qh, 1, start, stop),
                        ad.slice_axis(kh, 1, start, stop),
                        ad.slice_axis(vh, 1, start, stop),
                        causal_mask(block),
                    )
                )
                entries += block * (block + 1) // 2
            out = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
        else:
            raise DataError(f"unknown attention kind {kind!r}")

        if instrumentation is not None:
            instrumentation.record(layer_index, kind, entries, cfg.num_heads)
        merged = self._merge_heads(out)
        return ad.linear(merged, self.params[f"{p}.wo"], self.params[f"{p}.bo"])

    def feed_forward(self, x: Tensor, layer_index: int) -> Tensor:
        p = f"layer{layer_index}.ffn"
        hidden = ad.relu(ad.linear(x, self.params[f"{p}.w1"], self.params[f"{p}.b1"]))
        return ad.linear(hidden, self.params[f"{p}.w2"], self.params[f"{p}.b2"])

    def _expert_forward(self, x: Tensor, layer_index: int, expert: int) -> Tensor:
        p = f"layer{layer_index}.moe.expert{expert}"
        hidden = ad.relu(ad.linear(x, self.params[f"{p}.w1"], self.params[f"{p}.b1"]))
        return ad.linear(hidden, self.params[f"{p}.w2"], self.params[f"{p}.b2"])

    def moe_ffn(self, x: Tensor, layer_index: int) -> Tensor:
        """Top-k gated mixture: gate probabilities are renormalized over
        each position's selected experts; expert selection itself is a
        constant (non-differentiable) routing decision."""
        cfg = self.config
        assert cfg.moe is not None
        num_experts = cfg.moe.num_experts
        top_k = min(cfg.moe.top_k, num_experts)
        p = f"layer{layer_index}.moe.gate"
        gate = ad.softmax_lastdim(ad.linear(x, self.params[f"{p}.w"], self.params[f"{p}.b"]))
        order = np.argsort(-gate.values, axis=1, kind="stable")
        selected = np.zeros_like(gate.values)
        np.put_along_axis(selected, order[:, :top_k], 1.0, axis=1)
        masked = ad.mul(gate, Tensor(selected))
        weights = ad.div(masked, ad.sum_tensor(masked, axis=-1, keepdims=True))
        out = None
        for e in range(num_experts):
            column = ad.slice_axis(weights, 1, e, e + 1)
            term = ad.mul(column, self._expert_forward(x, layer_index, e))
            out = term if out is None else ad.add(out, term)
        assert out is not None
        return out

    def decoder_layer(
        self,
        x: Tensor,
        layer_index: int,
        kind: str,
        instrumentation: AttentionInstrumentation | None = None,
    ) -> Tensor:
        cfg = self.config
        p = f"layer{layer_index}"
        attn = self.attention_sublayer(x, layer_index, kind, instrumentation)
        x = ad.layer_norm(
            ad.add(x, attn), self.params[f"{p}.ln1.gain"], self.params[f"{p}.ln1.bias"]
        )
        moe_index = cfg.moe.layer_index(len(cfg.layer_pattern)) if cfg.moe else None
        if moe_index == layer_index:
            ff = self.moe_ffn(x, layer_index)
        else:
            ff = self.feed_forward(x, layer_index)
        return ad.layer_norm(
            ad.add(x, ff), self.params[f"{p}.ln2.gain"], self.params[f"{p}.ln2.bias"]
        )

    # ------------------------------------------------------------------
    # forward / loss

    def forward_lm(
        self, ids, instrumentation: AttentionInstrumentation | None = None
    ) -> Tensor:
        """Logits [len(ids), vocab]; row t parameterizes the next-token
        distribution given ids[: t + 1]."""
        cfg = self.config
        ids = list(ids)
        if not ids:
            raise DataError("forward_lm: empty sequence")
        if len(ids) > cfg.max_len:
            raise DataError(f"sequence length {len(ids)} exceeds max_len {cfg.max_len}")
        if min(ids) < 0 or max(ids) >= cfg.vocab_size:
            raise DataError("token id out of vocabulary range")
        x = ad.embedding_lookup(self.params["embed.table"], ids)
        x = ad.add(ad.mul(x, Tensor(math.sqrt(cfg.d_model))), Tensor(self._pos[: len(ids)]))
        for i, kind in enumerate(cfg.layer_pattern):
            x = self.decoder_layer(x, i, kind, instrumentation)
        return ad.linear(x, self.params["out.w"], self.params["out.b"])

    def loss(self, ids, n_input: int, scope: str = "all_positions") -> Tensor:
        """Mean NLL of the next-token predictions selected by scope
        (training default scores input- and output-side positions)."""
        ids = list(ids)
        if len(ids) < 2:
            raise DataError("loss needs a sequence of at least 2 tokens")
        logits = self.forward_lm(ids)
        mask = scope_mask(len(ids), n_input, scope)
        return ad.cross_entropy_lm(
            ad.slice_axis(logits, 0, 0, len(ids) - 1), ids[1:], mask
        )

    def next_logits(self, ids) -> np.ndarray:
        """Last-position logits for autoregressive decoding."""
        return self.forward_lm(ids).values[-1]

    # ------------------------------------------------------------------
    # persistence

    def save(self, directory) -> None:
        save_arrays(directory, {name: p.values for name, p in self.params.items()})
        save_model_config(self.config, f"{directory}/model_config.txt")

    @classmethod
    def load(cls, directory) -> "TransformerDecoderModel":
        config = load_model_config(f"{directory}/model_config.txt")
        model = cls(config)
        arrays = load_arrays(directory)
        if set(arrays) != set(model.params):
            raise DataError("checkpoint parameter names do not match the configuration")
        for name, arr in arrays.items():
            if arr.shape != model.params[name].values.shape:
                raise DataError(f"checkpoint shape mismatch for {name}")
            model.params[name].values[...] = arr
        return model


def save_model_config(config: ModelConfig, path) -> None:
    lines = [
        f"vocab_size = {config.vocab_size}",
        f"layer_pattern = {config.layer_pattern}",
        f"d_model = {config.d_model}",
        f"num_heads = {config.num_heads}",
        f"d_ff = {config.d_ff}",
        f"max_len = {config.max_len}",
        f"block_size = {config.block_size}",
        f"compress_kernel = {config.compress_kernel}",
        f"compress_stride = {config.compress_stride}",
        f"dropout = {config.dropout}",
        f"seed = {config.seed}",
    ]
    if config.moe is not None:
        lines += [
            f"moe_experts = {config.moe.num_experts}",
            f"moe_top_k = {config.moe.top_k}",
            f"moe_layer_index = {config.moe.layer_index(len(config.layer_pattern))}",
        ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model_config(path) -> ModelConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = dict(
                (k.strip(), v.strip())
                for k, v in (line.split("=", 1) for line in fh if "=" in line)
            )
    except OSError as exc:
        raise DataError(f"cannot read model config {path}: {exc}") from exc
    moe = None
    if "moe_experts" in raw:
        moe = MoEConfig(
            num_experts=int(raw["moe_experts"]),
            top_k=int(raw["moe_top_k"]),
            replace_layer_index=int(raw["moe_layer_index"]),
        )
    return ModelConfig(
        vocab_size=int(raw["vocab_size"]),
        layer_pattern=raw["layer_pattern"],
        d_model=int(raw["d_model"]),
        num_heads=int(raw["num_heads"]),
        d_ff=int(raw["d_ff"]),
        max_len=int(raw["max_len"]),
        block_size=int(raw["block_size"]),
        compress_kernel=int(raw["compress_kernel"]),
        compress_stride=int(raw["compress_stride"]),
        moe=moe,
        dropout=float(raw.get("dropout", 0.0)),
        seed=int(raw["seed"]),
    )
