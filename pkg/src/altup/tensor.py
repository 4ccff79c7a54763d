"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations record onto the active :class:`Graph` (a tape) when any input
requires gradients and a graph is active; otherwise they evaluate eagerly
with no tracking. Broadcasting is deliberately restricted: operand shapes
must match exactly, or the smaller shape must be a trailing suffix of the
larger (leading-batch expansion), or one operand must be scalar-shaped.
Anything else raises :class:`ShapeError` rather than silently expanding.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327
_LN_EPS = 1e-6


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rule."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class GraphError(RuntimeError):
    """Raised on invalid backward calls (non-scalar loss, foreign loss)."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient check encounters NaN/inf; carries the parameter name."""

    def __init__(self, where):
        self.where = where
        super().__init__(f"non-finite value encountered at {where}")


# Multiply-accumulate counter for matrix products. Only the matmul primitive
# counts; elementwise ops, normalizations and activations are excluded so the
# counter matches the closed-form layer cost model exactly.
_mac_count = 0


def reset_mac_count():
    global _mac_count
    _mac_count = 0


def mac_count() -> int:
    return _mac_count


class Tensor:
    """A named, row-major float64 array, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_state = threading.local()


def _graph_stack():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_graph():
    stack = _graph_stack()
    return stack[-1] if stack else None


class Graph:
    """Tape of primitive applications, rebuilt per forward pass.

    Use as a context manager around a forward computation, then call
    :func:`backward` (or ``graph.backward``) on the scalar loss.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        return False

    def backward(self, loss: Tensor):
        backward(self, loss)


def _record(op, inputs, out_data, backward_fn) -> Tensor:
    graph = active_graph()
    tracked = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        graph.nodes.append(_Node(op, inputs, out, backward_fn))
    return out


def backward(graph: Graph, loss: Tensor):
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every tensor on the tape.

    Gradients accumulate additively across fan-out and across repeated calls;
    callers reset parameter grads between steps. Accumulation order is the
    fixed reverse tape order, so results are bitwise deterministic.
    """
    if loss.data.shape not in ((), (1,), (1, 1)):
        raise GraphError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    produced = any(node.output is loss for node in graph.nodes)
    if not produced:
        raise GraphError("backward: loss was not produced by this graph")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        gout = node.output.grad
        if gout is None:
            continue
        grads = node.backward_fn(gout)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                t.grad = t.grad + g


# ---------------------------------------------------------------------------
# Broadcasting helpers (exact match, trailing suffix, or scalar operand only)
# ---------------------------------------------------------------------------


def _is_scalar_shape(shape):
    return all(d == 1 for d in shape)


def _check_elementwise(op, a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or _is_scalar_shape(sa) or _is_scalar_shape(sb):
        return
    small, large = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if large[len(large) - len(small):] != small:
        raise ShapeError(op, sa, sb)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, td) in enumerate(zip(g.shape, shape)) if td == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _record("add", [a, b], out, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    out = a.data - b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _record("sub", [a, b], out, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _record("mul", [a, b], out, bw)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def bw(g):
        return (g * c,)

    return _record("scalar_mul", [a], out, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    global _mac_count
    m, k = a.data.shape
    n = b.data.shape[1]
    _mac_count += m * n * k
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T, ad.T @ g)

    return _record("matmul", [a, b], out, bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.data.shape)
    out = a.data.T.copy()

    def bw(g):
        return (g.T,)

    return _record("transpose", [a], out, bw)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _record("relu", [a], out, bw)


def gelu(a: Tensor) -> Tensor:
    """Exact erf-based GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)

    def bw(g):
        return (g * (cdf + x * pdf),)

    return _record("gelu", [a], out, bw)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _record("sigmoid", [a], s, bw)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def bw(g):
        return (g / ad,)

    return _record("log", [a], out, bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax", [a], y, bw)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", [a], out, bw)


def layer_norm(x: Tensor, scale: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale."""
    if x.data.shape[-1] != scale.data.shape[-1] or scale.data.ndim != 1:
        raise ShapeError("layer_norm", x.data.shape, scale.data.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data
    sdata = scale.data

    def bw(g):
        gxhat = g * sdata
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        gscale = _unbroadcast(g * xhat, sdata.shape)
        return (gx, gscale)

    return _record("layer_norm", [x, scale], out, bw)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of ``x`` by integer index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    n_rows = x.data.shape[0]
    if idx.ndim != 1:
        raise ShapeError("gather_rows", x.data.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        bad = int(np.argmax((idx < 0) | (idx >= n_rows)))
        raise IndexError(f"gather_rows: index {int(idx[bad])} at position {bad} out of range [0, {n_rows})")
    out = x.data[idx]
    xshape = x.data.shape

    def bw(g):
        gx = np.zeros(xshape, dtype=np.float64)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record("gather_rows", [x], out, bw)


def scatter_rows(x: Tensor, indices, n_rows: int) -> Tensor:
    """Place rows of ``x`` at the given indices of a zero (n_rows, ...) tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise ShapeError("scatter_rows", x.data.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"scatter_rows: index out of range [0, {n_rows})")
    out = np.zeros((n_rows,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(out, idx, x.data)

    def bw(g):
        return (g[idx],)

    return _record("scatter_rows", [x], out, bw)


def gather_cols(x: Tensor, indices) -> Tensor:
    """Pick one element per row, x[i, indices[i]], returned as a column (N, 1)."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise ShapeError("gather_cols", x.data.shape, idx.shape)
    n, m = x.data.shape
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError(f"gather_cols: index out of range [0, {m})")
    rows = np.arange(n)
    out = x.data[rows, idx][:, None]

    def bw(g):
        gx = np.zeros((n, m), dtype=np.float64)
        np.add.at(gx, (rows, idx), g[:, 0])
        return (gx,)

    return _record("gather_cols", [x], out, bw)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` by the scalar s[i, 0]."""
    if x.data.ndim != 2 or s.data.shape != (x.data.shape[0], 1):
        raise ShapeError("scale_rows", x.data.shape, s.data.shape)
    out = x.data * s.data
    xd, sd = x.data, s.data

    def bw(g):
        return (g * sd, (g * xd).sum(axis=1, keepdims=True))

    return _record("scale_rows", [x, s], out, bw)


def concat_last(tensors) -> Tensor:
    tensors = list(tensors)
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeError("concat_last", tensors[0].data.shape, t.data.shape)
    sizes = [t.data.shape[-1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=-1)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _record("concat_last", tensors, out, bw)


def slice_last(x: Tensor, start: int, size: int) -> Tensor:
    if start < 0 or start + size > x.data.shape[-1]:
        raise ShapeError("slice_last", x.data.shape, (start, size))
    out = x.data[..., start:start + size].copy()
    xshape = x.data.shape

    def bw(g):
        gx = np.zeros(xshape, dtype=np.float64)
        gx[..., start:start + size] = g
        return (gx,)

    return _record("slice_last", [x], out, bw)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError("reshape", x.data.shape, shape)
    out = x.data.reshape(shape)
    xshape = x.data.shape

    def bw(g):
        return (g.reshape(xshape),)

    return _record("reshape", [x], out, bw)


def sum_all(x: Tensor) -> Tensor:
    out = x.data.sum()
    xshape = x.data.shape

    def bw(g):
        return (np.full(xshape, float(g)),)

    return _record("sum_all", [x], out, bw)


def mean_all(x: Tensor) -> Tensor:
    out = x.data.mean()
    xshape = x.data.shape
    inv = 1.0 / x.data.size

    def bw(g):
        return (np.full(xshape, float(g) * inv),)

    return _record("mean_all", [x], out, bw)


PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "matmul": matmul,
    "transpose": transpose,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "log": log,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
    "gather_rows": gather_rows,
    "scatter_rows": scatter_rows,
    "gather_cols": gather_cols,
    "scale_rows": scale_rows,
    "concat_last": concat_last,
    "slice_last": slice_last,
    "reshape": reshape,
    "sum_all": sum_all,
    "mean_all": mean_all,
}


def apply_primitive(op: str, inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name. Unknown names raise KeyError."""
    fn = PRIMITIVES[op]
    if op == "concat_last":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f(params)`` to central differences.

    Returns the max over all parameter entries of
    ``|ad - fd| / max(1e-8, |fd| + |ad|)``. ``f`` must be deterministic and
    return a scalar Tensor. Raises :class:`NonFiniteError` (naming the
    parameter) if any value or gradient is NaN/inf.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    for p in params:
        p.grad = None
    with Graph() as graph:
        loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss")
    backward(graph, loss)

    analytic = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NonFiniteError(p.name or "unnamed parameter")
        analytic.append(np.array(g, copy=True))

    max_err = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        ad_flat = ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(params).item()
            flat[i] = orig - eps
            f_minus = f(params).item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError(f"{p.name or 'unnamed parameter'}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1e-8, abs(fd) + abs(ad_flat[i]))
            err = abs(ad_flat[i] - fd) / denom
            if err > max_err:
                max_err = err
    return max_err
