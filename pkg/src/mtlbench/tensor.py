"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value is a numpy float64 array wrapped in a :class:`Tensor`. Operations
record a closure that knows how to push gradients to their inputs; calling
``backward()`` on a scalar replays those closures in exact reverse creation
order, accumulating gradients additively. Graphs are plain object linkage:
independent graphs never share state, so separate forwards may run on
separate threads.

Gradient recording can be suspended with :func:`no_grad` (forward-only
evaluation, used heavily by finite-difference checks).
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from .errors import DegenerateInputError, ShapeError, StateError

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def assert_finite(self, context: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            from .errors import NumericError

            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            raise NumericError(f"{context}: {bad} non-finite value(s), shape {self.data.shape}")
        return self

    # -- graph -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable tensor
        that requires gradients. ``self`` must be scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        if self._backward is None and not self.requires_grad:
            raise StateError("backward() before any differentiable forward op was recorded")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        # Reverse creation order == exact reverse of the forward pass.
        nodes.sort(key=lambda t: t._id, reverse=True)
        self.grad = np.ones_like(self.data)
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _from_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _from_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _from_op(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _from_op(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return _from_op(-a.data, (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _from_op(a.data**p, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _from_op(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g / a.data)

    return _from_op(np.log(a.data), (a,), backward)


def sin(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * np.cos(a.data))

    return _from_op(np.sin(a.data), (a,), backward)


def cos(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g * np.sin(a.data))

    return _from_op(np.cos(a.data), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _from_op(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _from_op(np.maximum(a.data, 0.0), (a,), backward)


# -- reductions --------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis] if isinstance(axis, int) else int(np.prod([a.data.shape[i] for i in axis]))

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg / n, a.shape).copy())

    return _from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _from_op(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    inv = tuple(sorted(range(len(axes)), key=axes.__getitem__))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _from_op(a.data.transpose(axes), (a,), backward)


def concat(parts, axis: int) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _from_op(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def _getitem(a: Tensor, key) -> Tensor:
    def backward(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            gx[key] = g
            _accum(a, gx)

    return _from_op(a.data[key], (a,), backward)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of ``a`` along axis 0; ``idx`` may repeat and have any shape."""
    idx = np.asarray(idx)

    def backward(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            np.add.at(gx, idx, g)
            _accum(a, gx)

    return _from_op(a.data[idx], (a,), backward)


# -- linear algebra ----------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b`` with ``w`` (Din, Dout) and ``b`` (Dout,)."""

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ w.data.swapaxes(-1, -2))
        if w.requires_grad:
            _accum(w, _unbroadcast(x.data.swapaxes(-1, -2) @ g, w.shape))
        if b.requires_grad:
            _accum(b, g.sum(axis=tuple(range(g.ndim - 1))))

    return _from_op(x.data @ w.data + b.data, (x, w, b), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    n = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = dxhat.sum(axis=-1, keepdims=True) + xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accum(x, (dxhat - term / n) * inv)

    return _from_op(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.data.shape} @ {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _from_op(a.data @ b.data, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _from_op(out_data, (a,), backward)


def masked_max_pool(a: Tensor, mask: np.ndarray) -> Tensor:
    """Per-feature max of ``a`` (N, P, D) over valid P entries per row.

    Gradient flows only into the winning entries. A row with no valid entry
    is an error: there is nothing to pool.
    """
    mask = np.asarray(mask, dtype=bool)
    if a.data.ndim != 3 or mask.shape != a.data.shape[:2]:
        raise ShapeError(f"masked_max_pool: data {a.data.shape} vs mask {mask.shape}")
    if not mask.any(axis=1).all():
        bad = np.flatnonzero(~mask.any(axis=1))
        raise DegenerateInputError(f"masked_max_pool: fully masked rows {bad.tolist()}")
    neg = np.where(mask[:, :, None], a.data, -np.inf)
    winners = neg.argmax(axis=1)  # (N, D)
    out_data = np.take_along_axis(neg, winners[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            np.put_along_axis(gx, winners[:, None, :], g[:, None, :], axis=1)
            _accum(a, gx)

    return _from_op(out_data, (a,), backward)
