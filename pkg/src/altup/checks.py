"""Gradient-check suite over the full layer-variant matrix.

Small instances (block width <= 8, sequence <= 4, vocab 11) of every variant,
each checked end to end against central finite differences. Used by the
acceptance tests and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from .models import Model
from .tensor import grad_check
from .transformer import ModelConfig

GRADCHECK_TOLERANCE = 1e-4

_IDS = [1, 4, 7, 2]
_TARGETS = [4, 7, 2, 9]


def _cfg(d=8, L=2, heads=2, ffn=8):
    return ModelConfig(d_model=d, n_layers=L, n_heads=heads, ffn_hidden=ffn,
                       vocab_size=11, max_seq_len=4)


def suite_instances():
    """(name, model builder) pairs covering the variant matrix."""
    instances = [
        ("dense", lambda: Model(_cfg(), "dense", seed=11)),
        ("recycled_altup_k2", lambda: Model(_cfg(d=4, heads=1), "recycled_altup",
                                            altup_k=2, seed=13)),
        ("seq_altup_k1", lambda: Model(_cfg(L=1), "seq_altup", seq_stride=1,
                                       seq_wrap="all", seed=14)),
        ("seq_altup_k2", lambda: Model(_cfg(L=1), "seq_altup", seq_stride=2,
                                       seq_wrap="all", seed=15)),
        ("seq_altup_k4", lambda: Model(_cfg(L=1), "seq_altup", seq_stride=4,
                                       seq_wrap="all", seed=16)),
        ("stride_skip", lambda: Model(_cfg(L=1), "stride_skip", seq_stride=2,
                                      seq_wrap="all", seed=17)),
        ("memory_softmax_top1", lambda: Model(
            _cfg(d=4, L=1, heads=1), "dense", seed=18,
            memory={"n": 3, "rank": 2, "lookup": "softmax", "k": 1})),
        ("memory_softmax_top2", lambda: Model(
            _cfg(d=4, L=1, heads=1), "dense", seed=19,
            memory={"n": 3, "rank": 2, "lookup": "softmax", "k": 2})),
    ]
    for k in (1, 2, 4):
        for selection in ("same", "alternating"):
            name = f"altup_k{k}_{selection}"
            instances.append((name, lambda k=k, s=selection: Model(
                _cfg(d=4, heads=1), "altup", altup_k=k, altup_selection=s,
                seed=20 + k)))
    return instances


def run_gradcheck_suite(eps: float = 1e-5):
    """Run every instance; yields (name, max relative error)."""
    results = []
    for name, builder in suite_instances():
        model = builder()

        def f(params, model=model):
            return model.loss(_IDS, _TARGETS)

        results.append((name, grad_check(f, model.parameters(), eps=eps)))
    return results
