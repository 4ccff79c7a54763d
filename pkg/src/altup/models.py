"""Assembly of trainable models for every layer variant.

One class covers the variant matrix: dense baseline, block-wise alternating
updates (plain and recycled), the summation baseline, sequence-axis
alternating updates, stride-and-skip, and average pooling, optionally with a
memory table attached to each layer. Parameter creation order is fixed by
construction so checkpoints and the parameter census are deterministic.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .alternating import (AltUpConfig, AltUpLayerParams, altup_layer_forward,
                          recycled_downproject, select_block, sum_consume)
from .costs import VARIANTS, wrapped_layer_count
from .memory import (HyperplaneLshParams, MemoryTable, RouterParams,
                     lsh_lookup, memory_augmented_forward,
                     minhash_sequence_lookup, softmax_lookup,
                     token_id_fixed_lookup)
from .sequence import (SeqAltUpParams, average_pool_seq, pooled_target_positions,
                       seq_altup_forward, stride_and_skip_forward)
from .tensor import Tensor
from .transformer import LayerParams, ModelConfig, cross_entropy, embed, layer_forward, lm_head

LOOKUPS = ("softmax", "token_id", "lsh", "minhash")


class Model:
    """A decoder-only LM in one of the variant configurations."""

    def __init__(self, cfg: ModelConfig, variant: str = "dense", altup_k: int = 2,
                 altup_selection: str = "alternating", altup_j_fixed: int = 0,
                 seq_stride: int = 4, seq_wrap: str = "interior",
                 memory: dict | None = None, seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if memory is not None and variant != "dense":
            raise ValueError("memory tables attach to the dense variant only")
        self.cfg = cfg
        self.variant = variant
        self.seed = seed
        d, v = cfg.d_model, cfg.vocab_size
        rng = np.random.default_rng(np.random.SeedSequence([seed]))

        self.altup_cfg = None
        if variant in ("altup", "recycled_altup"):
            self.altup_cfg = AltUpConfig(k=altup_k, d=d, selection=altup_selection,
                                         j_fixed=altup_j_fixed)

        emb_width = altup_k * d if variant == "altup" else d
        emb_std = 1.0 / np.sqrt(d)
        self.embed_table = Tensor(rng.normal(0, emb_std, (v, emb_width)),
                                  requires_grad=True, name="embed.table")
        self.extra_table = None
        if variant == "sum_baseline":
            self.extra_table = Tensor(rng.normal(0, emb_std, (v, d)),
                                      requires_grad=True, name="embed.extra")
        self.pos_table = Tensor(rng.normal(0, emb_std, (cfg.max_seq_len, d)),
                                requires_grad=True, name="pos.table")

        self.seq_stride = seq_stride
        self.seq_wrap = seq_wrap
        wrapped = wrapped_layer_count(cfg.n_layers, seq_wrap)
        first_wrapped = 1 if seq_wrap == "interior" else 0

        self.layers = []
        for i in range(cfg.n_layers):
            prefix = f"layers.{i}"
            entry = {"index": i}
            inner = LayerParams(d, cfg.ffn_hidden, cfg.n_heads, rng, prefix=prefix)
            if self.altup_cfg is not None:
                entry["altup"] = AltUpLayerParams(self.altup_cfg, inner, prefix=f"{prefix}.altup")
                entry["j_star"] = select_block(i, self.altup_cfg)
            else:
                entry["inner"] = inner
                if variant in ("seq_altup", "stride_skip"):
                    in_range = first_wrapped <= i < first_wrapped + wrapped
                    entry["wrapped"] = in_range
                    if variant == "seq_altup" and in_range:
                        entry["seq"] = SeqAltUpParams(seq_stride, prefix=f"{prefix}.seq")
            self.layers.append(entry)

        self.memory = memory
        self._mem = []
        if memory is not None:
            self._init_memory(memory, rng)

    def _init_memory(self, memory, rng):
        d, v = self.cfg.d_model, self.cfg.vocab_size
        lookup = memory["lookup"]
        if lookup not in LOOKUPS:
            raise ValueError(f"unknown lookup {lookup!r}; expected one of {LOOKUPS}")
        n = memory["n"]
        if lookup == "token_id" and n != v:
            raise ValueError(f"token_id lookup requires table size {v} (= vocab), got {n}")
        rank = memory.get("rank", 1)
        topk = memory.get("k", 1)
        jitter = memory.get("jitter_eps", 0.01)
        for i in range(self.cfg.n_layers):
            slot = {"kind": lookup}
            if lookup == "softmax":
                slot["router"] = RouterParams.create(
                    n, d, rng, k=topk, jitter_eps=jitter, name=f"layers.{i}.router.w")
            elif lookup == "lsh":
                slot["lsh"] = HyperplaneLshParams.create(
                    d, n, seed=np.random.SeedSequence([self.seed, 7, i]))
            elif lookup == "minhash":
                slot["perm_seed"] = int(np.random.default_rng(
                    np.random.SeedSequence([self.seed, 11, i])).integers(0, 2**62))
            slot["table"] = MemoryTable(n, d, rank, rng,
                                        constant=memory.get("constant", False),
                                        prefix=f"layers.{i}.table")
            self._mem.append(slot)

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        params = [self.embed_table]
        if self.extra_table is not None:
            params.append(self.extra_table)
        params.append(self.pos_table)
        for i, entry in enumerate(self.layers):
            if "altup" in entry:
                params.extend(entry["altup"].params())
            else:
                if "seq" in entry:
                    params.extend(entry["seq"].params())
                params.extend(entry["inner"].params())
            if self._mem:
                slot = self._mem[i]
                if "router" in slot:
                    params.append(slot["router"].w)
                params.extend(slot["table"].params())
        return params

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def census(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def _input_stream(self, ids):
        t = len(ids)
        if t > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {t} exceeds max_seq_len {self.cfg.max_seq_len}")
        pos = T.gather_rows(self.pos_table, np.arange(t))
        if self.variant == "altup":
            k = self.altup_cfg.k
            wide_pos = T.concat_last([pos] * k) if k > 1 else pos
            return T.add(embed(ids, self.embed_table), wide_pos)
        if self.variant == "recycled_altup":
            base = T.add(embed(ids, self.embed_table), pos)
            k = self.altup_cfg.k
            return T.concat_last([base] * k) if k > 1 else base
        if self.variant == "sum_baseline":
            mixed = sum_consume(embed(ids, self.embed_table),
                                embed(ids, self.extra_table))
            return T.add(mixed, pos)
        return T.add(embed(ids, self.embed_table), pos)

    def _memory_augment(self, slot, x_in, inner_out, ids, training, rng):
        kind = slot["kind"]
        if kind == "softmax":
            lookup = softmax_lookup(slot["router"], training=training, rng=rng)
        elif kind == "token_id":
            lookup = token_id_fixed_lookup(slot["table"].n)
        elif kind == "lsh":
            lookup = lsh_lookup(slot["lsh"])
        else:
            lookup = minhash_sequence_lookup(ids, slot["perm_seed"], slot["table"].n)
        t, d = x_in.data.shape
        rows = []
        for pos in range(t):
            x_t = T.reshape(T.gather_rows(x_in, [pos]), (d,))
            inner_t = T.reshape(T.gather_rows(inner_out, [pos]), (d,))
            out_t = memory_augmented_forward(x_t, int(ids[pos]), inner_t,
                                             lookup, slot["table"])
            rows.append(T.reshape(out_t, (1, d)))
        return T.reshape(T.concat_last(rows), (t, d))

    def forward(self, ids, training: bool = False, rng=None):
        """Token ids -> (logits, target positions the logit rows predict)."""
        ids = np.asarray(ids, dtype=np.int64)
        t = len(ids)
        x = self._input_stream(ids)
        out_positions = np.arange(t)
        if self.variant == "avg_pool":
            x = average_pool_seq(x, self.seq_stride)
            out_positions = pooled_target_positions(t, self.seq_stride)

        for i, entry in enumerate(self.layers):
            if "altup" in entry:
                x = altup_layer_forward(x, entry["altup"], entry["j_star"], causal=True)
            elif self.variant == "seq_altup" and entry.get("wrapped"):
                x = seq_altup_forward(x, entry["inner"], entry["seq"], causal=True)
            elif self.variant == "stride_skip" and entry.get("wrapped"):
                x = stride_and_skip_forward(x, entry["inner"], self.seq_stride, causal=True)
            else:
                x_in = x
                x = layer_forward(x, entry["inner"], causal=True)
                if self._mem:
                    x = self._memory_augment(self._mem[i], x_in, x, ids, training, rng)

        if self.variant == "altup":
            logits = lm_head(x, self.embed_table)
        elif self.variant == "recycled_altup":
            logits = lm_head(recycled_downproject(x, self.altup_cfg.k), self.embed_table)
        else:
            logits = lm_head(x, self.embed_table)
        return logits, out_positions

    def loss(self, ids, targets, training: bool = False, rng=None):
        logits, out_positions = self.forward(ids, training=training, rng=rng)
        targets = np.asarray(targets, dtype=np.int64)
        return cross_entropy(logits, targets[out_positions])


def build_model(cfg: ModelConfig, variant: str = "dense", **kwargs) -> Model:
    return Model(cfg, variant, **kwargs)
