"""Minimal reverse-mode autodiff over dense numpy arrays.

Ops record a tape eagerly: each result keeps its parent tensors and a
closure that maps the output gradient to parent gradients. ``backward``
walks the tape in reverse topological order exactly once, summing
gradients at fan-out points. Recording is disabled inside :func:`no_grad`
(per thread), which is how inference and finite-difference probes run.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A dense array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- graph walk ------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch(
                    f"backward() without gradient needs a scalar, got {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in order:
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                # grads are never mutated in place, so holding views is safe
                parent.grad = g if parent.grad is None else parent.grad + g

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order, iterative to survive deep graphs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape the operand actually had."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and linear algebra ------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul of {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _make(data, (a,), backward)


def log_clamped(a, eps: float = 1e-12) -> Tensor:
    """log(max(x, eps)); gradient is zero wherever the clamp engages."""
    a = as_tensor(a)
    clamped = np.maximum(a.data, eps)
    data = np.log(clamped)

    def backward(g):
        return (g * (a.data > eps) / clamped,)

    return _make(data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        d = x.shape[-1]
        gy = g * gamma.data
        gx = inv * (
            gy
            - gy.mean(axis=-1, keepdims=True)
            - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(data, (x, gamma, beta), backward)


# -- shape manipulation -------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _make(data, (a,), backward)


def concat_feature(tensors) -> Tensor:
    """Concatenate along the last (feature) axis."""
    tensors = [as_tensor(t) for t in tensors]
    base = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != base:
            raise ShapeMismatch(
                f"concat_feature of {tensors[0].shape} and {t.shape}"
            )
    data = np.concatenate([t.data for t in tensors], axis=-1)
    sizes = [t.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[..., offsets[i] : offsets[i + 1]] for i in range(len(tensors))
        )

    return _make(data, tuple(tensors), backward)


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table`` (V x D) by an integer index array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding ids out of range for table {table.shape}")
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(data, (table,), backward)


def scatter_sum(weights, ids, size: int) -> Tensor:
    """Accumulate ``weights[..., i]`` into output slot ``ids[..., i]``.

    Duplicate ids accumulate. Implements the copy-distribution construction:
    the result rows sum to whatever the weight rows sum to.
    """
    weights = as_tensor(weights)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != weights.shape:
        raise ShapeMismatch(f"scatter ids {ids.shape} vs weights {weights.shape}")
    flat_w = weights.data.reshape(-1, weights.shape[-1])
    flat_i = ids.reshape(-1, ids.shape[-1])
    out = np.zeros((flat_w.shape[0], size), dtype=weights.data.dtype)
    rows = np.arange(flat_w.shape[0])[:, None]
    np.add.at(out, (rows, flat_i), flat_w)
    data = out.reshape(weights.shape[:-1] + (size,))

    def backward(g):
        return (np.take_along_axis(g, ids, axis=-1),)

    return _make(data, (weights,), backward)


# -- reductions ---------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), backward)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """A 0/1 keep-mask; multiply it in via :func:`mul` (constant, no grad)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"rate must be in [0, 1), got {rate}")
    return (rng.random(shape) >= rate).astype(np.float64)


def check_finite(t: Tensor, what: str = "value") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteValue(f"non-finite {what}")
    return t


def linear(x, weight, bias=None) -> Tensor:
    """x @ W (+ b). Weight is (in, out)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def cross_entropy_label_smoothed(logits, target: int, eps: float) -> Tensor:
    """Label-smoothed cross entropy for one distribution over V units.

    The smoothed target puts 1 - eps on ``target`` and eps / (V - 1) on every
    other unit.
    """
    logits = as_tensor(logits)
    v = logits.shape[-1]
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range for {v} units")
    logp = sub(logits, _logsumexp(logits))
    off = eps / (v - 1)
    q = np.full(v, off)
    q[target] = 1.0 - eps
    return mul(sum_(mul(logp, q)), -1.0)


def _logsumexp(logits: Tensor) -> Tensor:
    m = logits.data.max(axis=-1, keepdims=True)
    shifted = sub(logits, m)
    e = exp(shifted)
    return add(log_clamped(sum_(e, axis=-1, keepdims=True)), m)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward)
