"""Dense float64 tensors with reverse-mode automatic differentiation.

The differentiable surface is a fixed catalog of thirteen primitives:
matmul, add, multiply, concat, reshape, embedding, sigmoid, tanh, relu,
layer_norm, dropout, softmax and log.  Everything else in the package
(attention kernels, recurrent cells, losses) is composed from these, so a
gradient check on the catalog covers every model end to end.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Rng",
    "Tensor",
    "no_grad",
    "PRIMITIVES",
    "matmul",
    "add",
    "multiply",
    "concat",
    "reshape",
    "embedding",
    "sigmoid",
    "tanh",
    "relu",
    "layer_norm",
    "dropout",
    "softmax",
    "log",
    "sum_all",
    "mean_rows",
    "constant",
    "uniform_init",
    "make_dropout_mask",
]

PRIMITIVES = (
    "matmul", "add", "multiply", "concat", "reshape", "embedding",
    "sigmoid", "tanh", "relu", "layer_norm", "dropout", "softmax", "log",
)

LAYER_NORM_EPS = 1e-5

_GRAD_ENABLED = True


class no_grad:
    """Context manager that detaches all ops created inside it (inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Rng:
    """Counter-based random source: equal seeds give bit-identical draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.draws = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape=None):
        self.draws += 1
        return self._gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        self.draws += 1
        return self._gen.normal(loc, scale, shape)

    def integers(self, low, high, shape=None):
        self.draws += 1
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        self.draws += 1
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent stream; same (seed, key) gives the same stream."""
        return Rng((self.seed ^ (key * 0x9E3779B97F4A7C15)) % 2**63)

    def __repr__(self):
        return f"Rng(seed={self.seed}, draws={self.draws})"


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus an optional record of the op that produced it.

    ``requires_grad`` marks leaves whose gradient is wanted; any op with at
    least one grad-requiring input records a backward closure.  ``backward``
    on a scalar runs reverse topological accumulation; repeated calls without
    ``zero_grad`` accumulate into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad=False, name=None, _children=(), _op=None):
        self.data = _as_array(data)
        self.grad = None
        rg = bool(requires_grad) or any(c.requires_grad for c in _children)
        if _children and not _GRAD_ENABLED:
            rg = False
        self.requires_grad = rg
        self.name = name
        self._backward = None
        self._prev = tuple(_children) if self.requires_grad else ()
        self._op = _op

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- gradient plumbing ---------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``grad`` on every reachable grad-requiring tensor."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a constant with no computation graph")

        # Iterative topological order; graphs from long decode loops can be
        # deeper than the default recursion limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited and child.requires_grad:
                    stack.append((child, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar (all routed through catalog primitives) --------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))

    def __rsub__(self, other):
        return add(multiply(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)


def constant(data, name=None) -> Tensor:
    """A tensor that never takes gradients (masks, index maps, scales)."""
    return Tensor(data, requires_grad=False, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- the thirteen primitives --------------------------------------------------


def matmul(a, b, transpose_a=False, transpose_b=False) -> Tensor:
    """2-D matrix product, with optional operand transposition.

    Transposition is part of this primitive (rather than a separate op) so
    attention's query-key product stays inside the checked catalog.
    """
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    ad = a.data.T if transpose_a else a.data
    bd = b.data.T if transpose_b else b.data
    if ad.shape[1] != bd.shape[0]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.shape}"
            f"{'^T' if transpose_a else ''} x {b.shape}{'^T' if transpose_b else ''}"
        )
    out = Tensor(ad @ bd, _children=(a, b), _op="matmul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(bd @ g.T if transpose_a else g @ bd.T)
            if b.requires_grad:
                b._accumulate(g.T @ ad if transpose_b else ad.T @ g)
        out._backward = _backward
    return out


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, _children=(a, b), _op="add")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))
        out._backward = _backward
    return out


def multiply(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, _children=(a, b), _op="multiply")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._accumulate(_unbroadcast(b.data * out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(a.data * out.grad, b.shape))
        out._backward = _backward
    return out


def concat(tensors, axis=0) -> Tensor:
    """Concatenate along ``axis``; backward splits the gradient."""
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _children=tuple(tensors), _op="concat")
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def _backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.data.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(idx)])
        out._backward = _backward
    return out


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out = Tensor(x.data.reshape(shape), _children=(x,), _op="reshape")
    if out.requires_grad:
        old_shape = x.shape
        def _backward():
            x._accumulate(out.grad.reshape(old_shape))
        out._backward = _backward
    return out


def embedding(table, ids) -> Tensor:
    """Row gather: ``out[i] = table[ids[i]]``; backward scatter-adds.

    Besides word embeddings this implements every structured gather in the
    package (image patch extraction in the convolutional encoder).
    """
    table = _wrap(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if table.data.ndim != 2:
        raise ValueError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = Tensor(table.data[ids], _children=(table,), _op="embedding")
    if out.requires_grad:
        def _backward():
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, out.grad)
        out._backward = _backward
    return out


def _unary(x, fwd, make_back, op):
    x = _wrap(x)
    y = fwd(x.data)
    out = Tensor(y, _children=(x,), _op=op)
    if out.requires_grad:
        back = make_back(x.data, y)
        def _backward():
            x._accumulate(back(out.grad))
        out._backward = _backward
    return out


def sigmoid(x) -> Tensor:
    def fwd(d):
        # Split by sign to avoid overflow in exp.
        pos = d >= 0
        z = np.empty_like(d)
        z[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ex = np.exp(d[~pos])
        z[~pos] = ex / (1.0 + ex)
        return z
    return _unary(x, fwd, lambda d, y: (lambda g: g * y * (1.0 - y)), "sigmoid")


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda d, y: (lambda g: g * (1.0 - y * y)), "tanh")


def relu(x) -> Tensor:
    return _unary(x, lambda d: np.maximum(d, 0.0),
                  lambda d, y: (lambda g: g * (d > 0.0)), "relu")


def log(x) -> Tensor:
    return _unary(x, np.log, lambda d, y: (lambda g: g / d), "log")


def layer_norm(x, eps=LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance.

    Affine gain/bias are deliberately not part of the primitive; apply them
    with multiply/add so this op's gradient stays small and exactly checkable.
    """
    x = _wrap(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat, _children=(x,), _op="layer_norm")
    if out.requires_grad:
        def _backward():
            g = out.grad
            gm = g.mean(axis=-1, keepdims=True)
            gx = (g * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (g - gm - xhat * gx))
        out._backward = _backward
    return out


def dropout(x, mask) -> Tensor:
    """Inverted dropout against an explicit, pre-drawn mask.

    The mask (entries 0 or 1/keep) is fixed data, so repeated forward passes
    are deterministic and the op is finite-difference checkable.  Evaluation
    mode simply skips the call.
    """
    x = _wrap(x)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ValueError(f"dropout mask shape {mask.shape} != input shape {x.shape}")
    out = Tensor(x.data * mask, _children=(x,), _op="dropout")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * mask)
        out._backward = _backward
    return out


def make_dropout_mask(rng: Rng, shape, rate: float) -> np.ndarray:
    """Draw an inverted-dropout mask: 0 with probability ``rate``, else 1/keep."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.uniform(0.0, 1.0, shape) >= rate) / keep


def softmax(x, axis=-1) -> Tensor:
    """Max-stabilized softmax along ``axis``; slices sum to 1."""
    x = _wrap(x)
    if axis >= x.data.ndim or axis < -x.data.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=axis, keepdims=True)
    out = Tensor(y, _children=(x,), _op="softmax")
    if out.requires_grad:
        def _backward():
            g = out.grad
            x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = _backward
    return out


# -- catalog compositions ------------------------------------------------------


def sum_all(x) -> Tensor:
    """Sum of all entries as a 1x1 tensor (reshape + matmul with ones)."""
    x = _wrap(x)
    flat = reshape(x, (1, x.size))
    return matmul(flat, constant(np.ones((x.size, 1))))


def mean_rows(x) -> Tensor:
    """Mean over the rows of a 2-D tensor, shape (1, cols)."""
    x = _wrap(x)
    rows = x.shape[0]
    return matmul(constant(np.full((1, rows), 1.0 / rows)), x)


def uniform_init(rng: Rng, shape, name=None) -> Tensor:
    """Scaled-uniform weight init: U(-s, s) with s = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, shape), requires_grad=True, name=name)
