"""Closed-form parameter, FLOP, and activation-memory accounting.

FLOPs are multiply-accumulates of matrix products only (softmax, layer norm
and activations excluded), which is what the matmul counter in the tensor
module instruments, so closed forms and counters can be compared exactly.
Parameter counts must match the census of an actually constructed model,
entry for entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .transformer import ModelConfig

VARIANTS = ("dense", "altup", "recycled_altup", "sum_baseline",
            "seq_altup", "stride_skip", "avg_pool")


@dataclass
class CostReport:
    embedding_params: int
    non_embedding_params: int
    embedding_params_untied: int
    flops_per_token_per_layer: int
    altup_overhead_flops_per_token: int
    activation_memory_entries: float
    activation_memory_bytes: int
    assumptions: list = field(default_factory=list)

    def as_dict(self):
        return {
            "embedding_params": self.embedding_params,
            "non_embedding_params": self.non_embedding_params,
            "embedding_params_untied": self.embedding_params_untied,
            "flops_per_token_per_layer": self.flops_per_token_per_layer,
            "altup_overhead_flops_per_token": self.altup_overhead_flops_per_token,
            "activation_memory_entries": self.activation_memory_entries,
            "activation_memory_bytes": self.activation_memory_bytes,
            "assumptions": list(self.assumptions),
        }


def layer_flops(n: int, d_model: int, ffn_hidden: int, n_heads: int = 1):
    """Exact multiply-accumulate counts of one layer on an n-token sequence.

    Attention: 4 projections (4*n*d^2) plus scores and value mixing
    (2*n^2*d, summed over heads). FFN: gate, up, down (3*n*d*ffn).
    """
    if min(n, d_model, ffn_hidden, n_heads) < 1:
        raise ValueError("layer_flops: arguments must be positive")
    attention = 4 * n * d_model * d_model + 2 * n * n * d_model
    ffn = 3 * n * d_model * ffn_hidden
    return attention, ffn


def altup_overhead(d: int, k: int) -> int:
    """Extra per-token work of the predict and correct steps.

    Predict: k mixtures of k d-vectors, k*(2k-1)*d ops. Correct: one
    multiply-add per block element, 2*k*d ops. Quadratic in k, linear in d.
    """
    if k < 1 or d < 1:
        raise ValueError("altup_overhead: arguments must be positive")
    return k * (2 * k - 1) * d + 2 * k * d


def activation_memory(s: int, b: int, h: int, n_layers: int, a: int,
                      variant: str = "dense") -> float:
    """Training activation footprint in stored entries: s*b*h*L*(34 + 5*a*s/h),
    plus 3*s*b*h*L for the K=2 widened-representation variant."""
    if min(s, b, h, n_layers, a) < 1:
        raise ValueError("activation_memory: arguments must be positive")
    base = s * b * h * n_layers * (34.0 + 5.0 * a * s / h)
    if variant == "dense":
        return base
    if variant == "altup_k2":
        return base + 3.0 * s * b * h * n_layers
    raise ValueError(f"unknown activation variant {variant!r}")


def activation_memory_bytes(s, b, h, n_layers, a, variant="dense", element_size=8) -> int:
    return int(activation_memory(s, b, h, n_layers, a, variant) * element_size)


def _per_layer_params(d: int, ffn_hidden: int) -> int:
    # q, k, v, o, gate, up, down, two LN scale vectors
    return 4 * d * d + 3 * d * ffn_hidden + 2 * d


def wrapped_layer_count(n_layers: int, wrap: str = "interior") -> int:
    """How many layers the sequence-stride variants actually wrap."""
    if wrap == "all":
        return n_layers
    if wrap == "interior":
        return max(0, n_layers - 2)
    raise ValueError(f"unknown wrap mode {wrap!r}")


def memory_params_per_layer(n: int, rank: int, d: int, lookup: str,
                            constant: bool = False) -> int:
    table = n * d if constant else 2 * rank * n * d
    router = n * d if lookup == "softmax" else 0
    return table + router


def count_params(cfg: ModelConfig, variant: str, altup_k: int = 1,
                 memory: dict | None = None, seq_wrap: str = "interior") -> CostReport:
    """Closed-form parameter split for a model variant.

    Embedding params count the vocabulary table(s) under the weight-tied
    convention used by the constructed models; the untied view adds a
    separate output table at the head's input width. Learned position
    embeddings (always d-wide; tiled, not widened) count as non-embedding.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    d, v, L = cfg.d_model, cfg.vocab_size, cfg.n_layers
    assumptions = [
        "weight-tied input/output embedding; untied view adds one output table",
        "position embeddings are d-wide (tiled across sub-blocks) and counted as non-embedding",
        "FLOPs are matrix-product multiply-accumulates only",
    ]

    head_width = d
    per_layer_extra = 0
    emb = v * d
    if variant == "altup":
        emb = v * altup_k * d
        head_width = altup_k * d
        per_layer_extra = altup_k * altup_k + altup_k
    elif variant == "recycled_altup":
        per_layer_extra = altup_k * altup_k + altup_k
    elif variant == "sum_baseline":
        emb = 2 * v * d

    non_emb = cfg.max_seq_len * d + L * (_per_layer_params(d, cfg.ffn_hidden) + per_layer_extra)
    if variant == "seq_altup":
        non_emb += 3 * wrapped_layer_count(L, seq_wrap)
    if memory is not None:
        non_emb += L * memory_params_per_layer(
            memory["n"], memory.get("rank", 1), d, memory["lookup"],
            memory.get("constant", False))
        assumptions.append("memory: one table (and router, for softmax lookup) per layer")

    attn, ffn = layer_flops(cfg.max_seq_len, d, cfg.ffn_hidden, cfg.n_heads)
    per_token = (attn + ffn) // cfg.max_seq_len
    overhead = altup_overhead(d, altup_k) if variant in ("altup", "recycled_altup") else 0

    act_variant = "altup_k2" if (variant in ("altup", "recycled_altup") and altup_k == 2) else "dense"
    entries = activation_memory(cfg.max_seq_len, 1, d, L, cfg.n_heads, act_variant)

    return CostReport(
        embedding_params=emb,
        non_embedding_params=non_emb,
        embedding_params_untied=emb + v * head_width,
        flops_per_token_per_layer=per_token,
        altup_overhead_flops_per_token=overhead,
        activation_memory_entries=entries,
        activation_memory_bytes=int(entries * 8),
        assumptions=assumptions,
    )
