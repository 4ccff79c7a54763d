"""Alternating-updates transformer toolkit.

Widened-representation layers (predict-compute-correct over sub-blocks),
recycled and sequence-stride variants, memory-augmented layers with four
lookup functions, a parameter/FLOP/memory cost model, and a Monte-Carlo
collision harness for the lookup schemes.
"""

__version__ = "0.1.0"

from .tensor import Graph, Tensor, backward, grad_check

__all__ = ["Graph", "Tensor", "backward", "grad_check", "__version__"]
