"""Baseline width-d transformer pieces: embedding, pre-LN layer, LM head.

The layer is the unit every widened/strided variant wraps: pre-layer-norm
residual attention followed by a gated-GELU feedforward block. Every call is
logged (sequence length seen) so tests can assert how often and on how many
positions the layer actually ran.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

_NEG_INF = -1e30


@dataclass
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    ffn_hidden: int
    vocab_size: int
    max_seq_len: int

    def __post_init__(self):
        for field in ("d_model", "n_layers", "n_heads", "ffn_hidden", "vocab_size", "max_seq_len"):
            if getattr(self, field) < 1:
                raise ValueError(f"ModelConfig.{field} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )


class LayerParams:
    """Projection and FFN weights for one transformer layer of width d."""

    def __init__(self, d: int, ffn_hidden: int, n_heads: int, rng: np.random.Generator, prefix: str = "layer"):
        if d % n_heads != 0:
            raise ValueError(f"layer width {d} not divisible by n_heads {n_heads}")
        self.d = d
        self.ffn_hidden = ffn_hidden
        self.n_heads = n_heads
        self.prefix = prefix

        def w(rows, cols, name):
            return Tensor(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)),
                          requires_grad=True, name=f"{prefix}.{name}")

        self.wq = w(d, d, "attn.wq")
        self.wk = w(d, d, "attn.wk")
        self.wv = w(d, d, "attn.wv")
        self.wo = w(d, d, "attn.wo")
        self.w_gate = w(d, ffn_hidden, "ffn.gate")
        self.w_up = w(d, ffn_hidden, "ffn.up")
        self.w_down = w(ffn_hidden, d, "ffn.down")
        self.ln_attn = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln_attn")
        self.ln_ffn = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln_ffn")

    def params(self):
        return [self.wq, self.wk, self.wv, self.wo,
                self.w_gate, self.w_up, self.w_down, self.ln_attn, self.ln_ffn]

    def zero_all(self):
        """Zero every sublayer weight, keeping LN scales. Makes the layer an identity map."""
        for p in (self.wq, self.wk, self.wv, self.wo, self.w_gate, self.w_up, self.w_down):
            p.data[...] = 0.0
        return self


# Log of (sequence length) per layer_forward call; lets tests assert the
# single-compute and strided-compute contracts.
_layer_calls: list[int] = []


def reset_layer_calls():
    _layer_calls.clear()


def layer_calls() -> list[int]:
    return list(_layer_calls)


def embed(token_ids, table: Tensor) -> Tensor:
    """Rows of ``table`` selected by token id."""
    ids = np.asarray(token_ids, dtype=np.int64)
    vocab = table.data.shape[0]
    bad = np.nonzero((ids < 0) | (ids >= vocab))[0]
    if bad.size:
        pos = int(bad[0])
        raise IndexError(f"embed: token id {int(ids[pos])} at position {pos} out of range [0, {vocab})")
    return T.gather_rows(table, ids)


def _causal_mask(n: int) -> Tensor:
    mask = np.triu(np.full((n, n), _NEG_INF), k=1)
    return Tensor(mask)


def layer_forward(x: Tensor, params: LayerParams, causal: bool = True) -> Tensor:
    """One pre-LN residual layer: x + Attn(LN(x)), then + FFN(LN(.))."""
    n, d = x.data.shape
    if d != params.d:
        raise T.ShapeError("layer_forward", x.data.shape, (params.d,))
    _layer_calls.append(n)
    dh = d // params.n_heads
    scale = 1.0 / np.sqrt(dh)

    h = T.layer_norm(x, params.ln_attn)
    q = T.matmul(h, params.wq)
    k = T.matmul(h, params.wk)
    v = T.matmul(h, params.wv)
    mask = _causal_mask(n) if causal else None
    heads = []
    for i in range(params.n_heads):
        qh = T.slice_last(q, i * dh, dh)
        kh = T.slice_last(k, i * dh, dh)
        vh = T.slice_last(v, i * dh, dh)
        scores = T.scalar_mul(T.matmul(qh, T.transpose(kh)), scale)
        if mask is not None:
            scores = T.add(scores, mask)
        heads.append(T.matmul(T.softmax(scores), vh))
    attn = T.matmul(T.concat_last(heads), params.wo)
    x1 = T.add(x, attn)

    h2 = T.layer_norm(x1, params.ln_ffn)
    gated = T.mul(T.gelu(T.matmul(h2, params.w_gate)), T.matmul(h2, params.w_up))
    ffn = T.matmul(gated, params.w_down)
    return T.add(x1, ffn)


def lm_head(x: Tensor, table: Tensor) -> Tensor:
    """Logits = x @ table.T (weight-tied output projection)."""
    if x.data.shape[-1] != table.data.shape[-1]:
        raise T.ShapeError("lm_head", x.data.shape, table.data.shape)
    return T.matmul(x, T.transpose(table))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over positions of -log softmax(logits)[target], max-shifted for stability."""
    tgt = np.asarray(targets, dtype=np.int64)
    vocab = logits.data.shape[-1]
    bad = np.nonzero((tgt < 0) | (tgt >= vocab))[0]
    if bad.size:
        pos = int(bad[0])
        raise IndexError(f"cross_entropy: target {int(tgt[pos])} at position {pos} out of range [0, {vocab})")
    picked = T.gather_cols(T.log_softmax(logits), tgt)
    return T.scalar_mul(T.mean_all(picked), -1.0)
