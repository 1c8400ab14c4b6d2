"""Reverse-mode autodiff on dense float64 arrays.

A Tensor wraps a numpy array; applying a primitive records the node on an
implicit tape (parent links plus an adjoint closure). ``backward`` replays
the tape in reverse topological order and returns a gradient table for the
leaf tensors created with ``requires_grad=True``. Tapes are rebuilt on every
forward pass, so variable-length recurrences need no masking or padding.

Every primitive checks its output for NaN/Inf: a non-finite value anywhere
is treated as an error, not propagated.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes do not conform for the requested primitive."""


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backward."""

    __slots__ = ("data", "requires_grad", "parents", "_adjoint")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr.sum()):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents = None
        self._adjoint = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; constants are wrapped as non-differentiable leaves.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(data):
    return Tensor(data)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _track(t):
    return t.requires_grad or t.parents is not None


def _node(out, parents, adjoint):
    arr = np.asarray(out, dtype=np.float64)
    if not np.isfinite(arr.sum()):
        raise NonFiniteError("primitive produced non-finite values")
    result = Tensor.__new__(Tensor)
    result.data = arr
    result.requires_grad = False
    if _grad_enabled and any(_track(p) for p in parents):
        result.parents = parents
        result._adjoint = adjoint
    else:
        result.parents = None
        result._adjoint = None
    return result


# ---------------------------------------------------------------------------
# elementwise primitives

def _elementwise_shapes(a, b, op):
    """Same shape, scalar operand, or broadcast over one leading extent."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sa == () or sb == ():
        return None
    if len(sa) == len(sb) + 1 and sa[1:] == sb:
        return "b"  # b is broadcast across a's leading extent
    if len(sb) == len(sa) + 1 and sb[1:] == sa:
        return "a"
    raise ShapeMismatch(f"{op}: shapes {sa} and {sb} do not conform")


def _reduce_to(grad, shape):
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)  # undo the leading-extent broadcast


def add(a, b):
    _elementwise_shapes(a, b, "add")

    def adjoint(g):
        return (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape))

    return _node(a.data + b.data, (a, b), adjoint)


def sub(a, b):
    _elementwise_shapes(a, b, "sub")

    def adjoint(g):
        return (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), adjoint)


def mul(a, b):
    _elementwise_shapes(a, b, "mul")
    da, db = a.data, b.data

    def adjoint(g):
        return (_reduce_to(g * db, da.shape), _reduce_to(g * da, db.shape))

    return _node(da * db, (a, b), adjoint)


def neg(a):
    def adjoint(g):
        return (-g,)

    return _node(-a.data, (a,), adjoint)


def tanh(a):
    out = np.tanh(a.data)

    def adjoint(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), adjoint)


def exp(a):
    with np.errstate(over="ignore"):  # _node rejects the resulting Inf
        out = np.exp(a.data)

    def adjoint(g):
        return (g * out,)

    return _node(out, (a,), adjoint)


def sigmoid(a):
    x = a.data
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def adjoint(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), adjoint)


def log(a):
    x = a.data
    if x.size and x.min() <= 0.0:
        raise ValueError(f"log: non-positive input (min={x.min()})")

    def adjoint(g):
        return (g / x,)

    return _node(np.log(x), (a,), adjoint)


def softplus(a):
    """log(1 + exp(x)) computed without overflow; adjoint is sigmoid(x)."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def adjoint(g):
        s = np.empty_like(x, dtype=np.float64)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return _node(out, (a,), adjoint)


def softmax(a):
    """Row-wise softmax of a vector or matrix, with max subtraction."""
    x = a.data
    if x.ndim not in (1, 2):
        raise ShapeMismatch(f"softmax: expected vector or matrix, got {x.shape}")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), adjoint)


# ---------------------------------------------------------------------------
# linear-algebra and structural primitives

def matmul(a, b):
    da, db = a.data, b.data
    if da.ndim not in (1, 2) or db.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul: ranks {da.ndim} and {db.ndim} unsupported")
    if da.shape[-1] != db.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {da.shape} and {db.shape} do not conform")

    def adjoint(g):
        if da.ndim == 2 and db.ndim == 2:
            return (g @ db.T, da.T @ g)
        if da.ndim == 2 and db.ndim == 1:
            return (np.outer(g, db), da.T @ g)
        if da.ndim == 1 and db.ndim == 2:
            return (db @ g, np.outer(da, g))
        return (g * db, g * da)  # vector dot product, g is scalar

    return _node(da @ db, (a, b), adjoint)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose: expected matrix, got {a.data.shape}")

    def adjoint(g):
        return (g.T,)

    return _node(a.data.T, (a,), adjoint)


def concat(parts, axis=0):
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat: no operands")
    extents = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + extents)

    def adjoint(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), adjoint)


def narrow(a, axis, start, length):
    """Contiguous slice of extent ``length`` starting at ``start`` along ``axis``."""
    extent = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > extent:
        raise ShapeMismatch(
            f"narrow: slice [{start}, {start + length}) out of range for extent {extent}"
        )
    slicer = [slice(None)] * a.data.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)

    def adjoint(g):
        full = np.zeros_like(a.data)
        full[slicer] = g
        return (full,)

    return _node(a.data[slicer], (a,), adjoint)


def reshape(a, shape):
    def adjoint(g):
        return (g.reshape(a.data.shape),)

    return _node(a.data.reshape(shape), (a,), adjoint)


def total(a):
    """Sum of all entries, as a scalar node."""
    shape = a.data.shape

    def adjoint(g):
        return (np.full(shape, float(g)),)

    return _node(a.data.sum(), (a,), adjoint)


# ---------------------------------------------------------------------------
# backward

def _topological_order(root):
    # Iterative DFS postorder; nodes are marked visited at expansion time so
    # a fan-out node is finalized only after every consumer path reached it.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.parents is not None:
            for p in node.parents:
                if _track(p) and id(p) not in visited:
                    stack.append((p, False))
    return order


def backward(loss):
    """Gradient of a scalar loss for every reachable requires_grad leaf.

    Returns a dict mapping leaf Tensor -> numpy gradient array. The tape is
    left untouched, so the same leaves can be reused in a fresh forward pass.
    """
    if loss.data.shape != ():
        raise ShapeMismatch(f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = _topological_order(loss)
    partials = {id(loss): np.ones((), dtype=np.float64)}
    table = {}
    for node in reversed(order):
        g = partials.pop(id(node), None)
        if g is None:
            continue
        if node.parents is None:
            if node.requires_grad:
                table[node] = g
            continue
        for parent, pg in zip(node.parents, node._adjoint(g)):
            if not _track(parent):
                continue
            pid = id(parent)
            held = partials.get(pid)
            if held is None:
                partials[pid] = np.array(pg, dtype=np.float64, copy=True)
            else:
                held += pg
    return table


def finite_difference_gradient(f, params, epsilon=1e-5):
    """Central-difference gradient of ``f`` for each named parameter tensor.

    ``f`` is called with no arguments and must be deterministic; it reads the
    parameter tensors in place. Returns a dict name -> gradient array.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    table = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            hi = float(f())
            flat[i] = saved - epsilon
            lo = float(f())
            flat[i] = saved
            grad[i] = (hi - lo) / (2.0 * epsilon)
        table[name] = grad.reshape(p.data.shape)
    return table
