"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Tensors wrap numpy arrays. Every op computes its result eagerly and, when
any input requires gradients, records its parents plus a backward closure
on the output. ``backward`` replays the recorded graph in reverse
topological order and accumulates gradients into ``.grad`` buffers.

Shape rules are strict: elementwise ops require identical shapes, except
that a 0-d (scalar) tensor may combine with any shape. There is no other
broadcasting -- use ``repeat_rows`` to tile a row vector explicitly.
"""
from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Operands of an op have incompatible shapes."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(
        f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ "
        "(only scalar-with-tensor mixing is allowed)"
    )


def _fit(g, shape):
    """Reduce an upstream gradient onto an operand's shape (scalar case)."""
    if np.shape(g) == shape:
        return g
    return np.asarray(np.sum(g))


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise("add", a, b)

    def bw(g):
        _accum(a, _fit(g, a.data.shape))
        _accum(b, _fit(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise("sub", a, b)

    def bw(g):
        _accum(a, _fit(g, a.data.shape))
        _accum(b, _fit(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise("mul", a, b)

    def bw(g):
        _accum(a, _fit(g * b.data, a.data.shape))
        _accum(b, _fit(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise("div", a, b)

    def bw(g):
        _accum(a, _fit(g / b.data, a.data.shape))
        _accum(b, _fit(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bw)


def scale(a, c: float) -> Tensor:
    """Multiply by a plain python constant (no gradient for the constant)."""
    a = _coerce(a)
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul: expects 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects a 2-d tensor, got {a.data.shape}")

    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), bw)


def repeat_rows(a, n: int) -> Tensor:
    """Tile a (1, K) row vector into an (n, K) matrix."""
    a = _coerce(a)
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ShapeError(f"repeat_rows: expects shape (1, K), got {a.data.shape}")
    if n < 1:
        raise ShapeError(f"repeat_rows: n must be >= 1, got {n}")

    def bw(g):
        _accum(a, g.sum(axis=0, keepdims=True))

    return _make(np.repeat(a.data, n, axis=0), (a,), bw)


def concat(parts, axis: int) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [p.data.shape[axis] for p in parts]

    def bw(g):
        pos = 0
        for p, size in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(pos, pos + size)
            _accum(p, g[tuple(idx)])
            pos += size

    return _make(out, tuple(parts), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _coerce(a)
    extent = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > extent:
        raise ShapeError(
            f"narrow: window [{start}, {start + length}) exceeds axis {axis} "
            f"of shape {a.data.shape}"
        )
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accum(a, buf)

    return _make(a.data[idx].copy(), (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a) -> Tensor:
    a = _coerce(a)
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), bw)


def relu(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        _accum(a, g * (a.data > 0.0))

    return _make(np.maximum(a.data, 0.0), (a,), bw)


def exp(a) -> Tensor:
    a = _coerce(a)
    y = np.exp(a.data)

    def bw(g):
        _accum(a, g * y)

    return _make(y, (a,), bw)


def log(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def softmax(a, axis: int) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtracted first)."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, (g - inner) * y)

    return _make(y, (a,), bw)


def layer_norm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine part)."""
    a = _coerce(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        _accum(a, inv * (g - gm - y * gym))

    return _make(y, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and composites

def sum_all(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), bw)


def mean_all(a) -> Tensor:
    a = _coerce(a)
    n = a.data.size

    def bw(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _make(np.asarray(a.data.mean()), (a,), bw)


def l2norm(a) -> Tensor:
    """Euclidean norm of all entries (Frobenius norm for matrices)."""
    a = _coerce(a)
    val = float(np.sqrt((a.data * a.data).sum()))

    def bw(g):
        if val > 0.0:
            _accum(a, (float(g) / val) * a.data)

    return _make(np.asarray(val), (a,), bw)


def cosine(a, b) -> Tensor:
    """Cosine similarity of two same-shaped tensors, flattened.

    A zero-norm operand makes the similarity 0 by convention (constant,
    no gradient flows through that pair).
    """
    a, b = _coerce(a), _coerce(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cosine: shapes {a.data.shape} and {b.data.shape} differ")
    na, nb = l2norm(a), l2norm(b)
    if float(na.data) == 0.0 or float(nb.data) == 0.0:
        return Tensor(0.0)
    return div(sum_all(mul(a, b)), mul(na, nb))


def mse(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: shapes {a.data.shape} and {b.data.shape} differ")
    d = sub(a, b)
    return mean_all(mul(d, d))


def softmax_cross_entropy(logits, label: int) -> Tensor:
    """Cross-entropy of integer ``label`` under softmax(logits).

    Computed on the logits directly via log-sum-exp, so no probability is
    ever materialized in the loss path.
    """
    logits = _coerce(logits)
    x = logits.data.ravel()
    label = int(label)
    if not 0 <= label < x.size:
        raise ValueError(f"label {label} out of range for {x.size} logits")
    m = x.max()
    e = np.exp(x - m)
    s = e.sum()
    loss = (m + np.log(s)) - x[label]
    p = e / s

    def bw(g):
        gl = p.copy()
        gl[label] -= 1.0
        _accum(logits, (gl * float(g)).reshape(logits.data.shape))

    return _make(np.asarray(loss), (logits,), bw)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` for the whole graph.

    ``loss`` must hold a single value. Gradients add onto whatever is
    already in ``.grad``; callers reset leaf grads between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
