"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ``np.ndarray`` and records the operations applied to
it.  Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every tensor with
``requires_grad=True``.  All ops preserve the input dtype (float32 for
regular training/inference, float64 for gradient verification) and are
deterministic: same inputs, same bits out.

Only the handful of primitives the network needs are implemented; composite
functions (softmax, layer norm, SiLU, ...) are built from them so their
backward passes come for free.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _scalar(self, value) -> np.ndarray:
        """Coerce a python scalar to this tensor's dtype (no silent upcast)."""
        return np.asarray(value, dtype=self.data.dtype)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    # -- backward -----------------------------------------------------------
    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of ``self`` w.r.t. all upstream tensors."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            elif node.requires_grad and node._parents == ():
                node.grad = g if node.grad is None else node.grad + g


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative DFS topological order, reversed (root first)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


# -- primitive ops ----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out_data = a.data + b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return Tensor(out_data, True, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out_data = a.data - b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return Tensor(out_data, True, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out_data = a.data * b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return Tensor(out_data, True, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out_data = a.data / b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return Tensor(out_data, True, (a, b), backward)


def pow_const(a: Tensor, exponent: float) -> Tensor:
    out_data = a.data ** a._scalar(exponent)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g * a._scalar(exponent) * a.data ** a._scalar(exponent - 1.0)),)

    return Tensor(out_data, True, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dims broadcast like ``np.matmul``."""
    out_data = a.data @ b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return Tensor(out_data, True, (a, b), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g * out_data),)

    return Tensor(out_data, True, (a,), backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g / a.data),)

    return Tensor(out_data, True, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g * a._scalar(0.5) / out_data),)

    return Tensor(out_data, True, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g * np.sign(a.data)),)

    return Tensor(out_data, True, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, a._scalar(0.0))
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g * (a.data > 0)),)

    return Tensor(out_data, True, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # Stable: never exponentiates a large positive argument.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g * out_data * (1.0 - out_data)),)

    return Tensor(out_data, True, (a,), backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return Tensor(out_data, True, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in ax]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out_data = a.data.reshape(shape)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return Tensor(out_data, True, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out_data = np.swapaxes(a.data, ax1, ax2)
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        return ((a, np.swapaxes(g, ax1, ax2)),)

    return Tensor(out_data, True, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _needs_grad(*tensors):
        return Tensor(out_data)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, parts))

    return Tensor(out_data, True, tuple(tensors), backward)


def take(a: Tensor, key) -> Tensor:
    """Basic slicing / integer-array indexing with scatter-add backward."""
    out_data = a.data[key]
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return ((a, full),)

    return Tensor(out_data, True, (a,), backward)


def select_positions(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick one row per batch element: ``out[n] = a[n, index[n]]``."""
    n = a.shape[0]
    out_data = a.data[np.arange(n), index]
    if not a.requires_grad:
        return Tensor(out_data)

    def backward(g):
        full = np.zeros_like(a.data)
        full[np.arange(n), index] = g
        return ((a, full),)

    return Tensor(out_data, True, (a,), backward)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    out_data = np.broadcast_to(a.data, shape)
    if not a.requires_grad:
        return Tensor(out_data.copy())

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)),)

    return Tensor(out_data.copy(), True, (a,), backward)


# -- composites -------------------------------------------------------------


def silu(a: Tensor) -> Tensor:
    return mul(a, sigmoid(a))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, tensor_sum(e, axis=axis, keepdims=True))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed as relu(x) + log1p(e^{-|x|})."""
    neg_abs = mul(absolute(a), -1.0)
    return add(relu(a), log(add(exp(neg_abs), 1.0)))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = pow_const(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. ``rng=None`` (inference) is the identity."""
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    return mul(a, keep / np.asarray(1.0 - rate, dtype=a.data.dtype))


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    sq = tensor_sum(mul(a, a), axis=axis, keepdims=True)
    return div(a, sqrt(add(sq, eps)))


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
