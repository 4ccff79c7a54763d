"""Alternating updates over a widened token representation.

The representation is widened from d to K*d, split into K contiguous d-wide
sub-blocks. Each layer runs the real transformer layer on one selected block
and reconstructs the rest with a predict-compute-correct scheme driven by
K*K + K trainable scalars. Also provides the summation baseline, the
embedding-recycling input/output path, and the closed-form extra-parameter
counts for these variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .transformer import LayerParams, ModelConfig, embed, layer_forward

SELECTION_MODES = ("same", "alternating")


@dataclass
class AltUpConfig:
    k: int
    d: int
    selection: str = "alternating"
    j_fixed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("expansion factor k must be >= 1")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")
        if not (0 <= self.j_fixed < self.k):
            raise ValueError("j_fixed must lie in [0, k)")


class AltUpLayerParams:
    """Per-layer prediction matrix p (k x k), correction gains g (k,), inner layer.

    Initialization: p = identity, g = ones, so at init every block receives the
    computed delta and the k=1 case is exactly the plain layer.
    """

    def __init__(self, cfg: AltUpConfig, inner: LayerParams, prefix: str = "altup"):
        if inner.d != cfg.d:
            raise ValueError(f"inner layer width {inner.d} != sub-block width {cfg.d}")
        self.cfg = cfg
        self.inner = inner
        self.p = Tensor(np.eye(cfg.k), requires_grad=True, name=f"{prefix}.p")
        self.g = Tensor(np.ones((cfg.k, 1)), requires_grad=True, name=f"{prefix}.g")

    def params(self):
        return [self.p, self.g] + self.inner.params()


def select_block(layer_index: int, cfg: AltUpConfig) -> int:
    """Which sub-block the computation step runs on at a given layer.

    'same' always picks j_fixed; 'alternating' cycles layer_index mod k
    (zero-based layer indices).
    """
    if layer_index < 0:
        raise ValueError("layer_index must be >= 0")
    if cfg.selection == "same":
        return cfg.j_fixed
    return layer_index % cfg.k


def altup_layer_forward(x_old: Tensor, params: AltUpLayerParams, j_star: int,
                        causal: bool = True, inner_fn=None) -> Tensor:
    """Predict-compute-correct over the K sub-blocks of ``x_old`` (N, K*d).

    Predict  x_hat_i = sum_j p[i, j] * block_j,
    Compute  y = inner(block_{j_star})        (the single real layer call),
    Correct  x_new_i = x_hat_i + g_i * (y - x_hat_{j_star}).

    ``inner_fn`` overrides the compute step (any (N, d) -> (N, d) map); by
    default the wrapped transformer layer runs.
    """
    k, d = params.cfg.k, params.cfg.d
    n, width = x_old.data.shape
    if width != k * d:
        raise T.ShapeError("altup_layer_forward", x_old.data.shape, (n, k * d))
    if not (0 <= j_star < k):
        raise ValueError(f"j_star {j_star} out of range [0, {k})")

    blocks = [T.slice_last(x_old, j * d, d) for j in range(k)]
    stacked = T.reshape(
        T.concat_last([T.reshape(b, (1, n * d)) for b in blocks]), (k, n * d))
    x_hat = T.matmul(params.p, stacked)

    if inner_fn is None:
        y = layer_forward(blocks[j_star], params.inner, causal=causal)
    else:
        y = inner_fn(blocks[j_star])
    y_row = T.reshape(y, (1, n * d))
    hat_star = T.gather_rows(x_hat, [j_star])

    # Evaluated as (x_hat_i - g_i*x_hat_star) + g_i*y: with g = 0 the output is
    # exactly x_hat, and with g_i = 1, i = j_star the layer output passes
    # through bitwise (x - x cancels exactly), which the degeneracy identities
    # rely on.
    base = T.sub(x_hat, T.matmul(params.g, hat_star))
    x_new = T.add(base, T.matmul(params.g, y_row))

    out_blocks = [T.reshape(T.gather_rows(x_new, [i]), (n, d)) for i in range(k)]
    return T.concat_last(out_blocks)


def sum_consume(x: Tensor, extra: Tensor) -> Tensor:
    """Summation baseline: fold an extra embedding block into the token vector."""
    if x.data.shape != extra.data.shape:
        raise T.ShapeError("sum_consume", x.data.shape, extra.data.shape)
    return T.add(x, extra)


def recycled_embed(token_ids, table: Tensor, k: int) -> Tensor:
    """d-wide lookup replicated k times into a (N, k*d) representation."""
    if k < 1:
        raise ValueError("k must be >= 1")
    base = embed(token_ids, table)
    if k == 1:
        return base
    return T.concat_last([base] * k)


def recycled_downproject(x: Tensor, k: int) -> Tensor:
    """Sum the k contiguous d-wide sub-blocks back down to width d."""
    width = x.data.shape[-1]
    if k < 1 or width % k != 0:
        raise T.ShapeError("recycled_downproject", x.data.shape, (k,))
    d = width // k
    out = T.slice_last(x, 0, d)
    for j in range(1, k):
        out = T.add(out, T.slice_last(x, j * d, d))
    return out


def altup_param_count(model: ModelConfig, cfg: AltUpConfig, recycled: bool = False):
    """Extra learnable parameters: (per-layer, embedding).

    Per layer: k*k prediction scalars + k gains. Embedding: the widened table
    costs (k-1)*|V|*d extra; the recycled path keeps the d-wide table and adds
    nothing.
    """
    per_layer = cfg.k * cfg.k + cfg.k
    embedding = 0 if recycled else (cfg.k - 1) * model.vocab_size * model.d_model
    return per_layer, embedding
