"""Tape-based reverse-mode differentiation over numpy arrays.

Only the operations used by the three training objectives are provided.
Every op records its parents together with a vector-Jacobian product, and
:func:`grad` walks the recorded graph backwards from a scalar (or seeded)
output.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

VJP = Callable[[np.ndarray], np.ndarray]


class Tensor:
    """An array node in the computation graph."""

    __slots__ = ("value", "parents", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, parents: tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[tuple[Tensor, VJP], ...] = parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.value!r}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _node(value: np.ndarray, *links: tuple[Tensor, VJP]) -> Tensor:
    live = tuple((p, f) for p, f in links if p.requires_grad)
    return Tensor(value, requires_grad=bool(live), parents=live)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise binary ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _node(
        out,
        (a, lambda g: _unbroadcast(g / b.value, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / b.value, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a, lambda g: -g))


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands; a 1-D operand is treated as a vector as in numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 or b.ndim == 1:
        a2 = reshape(a, (1, -1)) if a.ndim == 1 else a
        b2 = reshape(b, (-1, 1)) if b.ndim == 1 else b
        out = matmul(a2, b2)
        return reshape(out, (a.value @ b.value).shape)
    return _node(
        a.value @ b.value,
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    )


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else ``b``. ``cond`` is constant."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        np.where(cond, a.value, b.value),
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), a.shape)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), b.shape)),
    )


# -- elementwise unary -----------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a, lambda g: g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a, lambda g: g / a.value))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a, lambda g: 0.5 * g / out))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * a.value, (a, lambda g: 2.0 * g * a.value))


_sigmoid = expit


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.value)
    return _node(s, (a, lambda g: g * s * (1.0 - s)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node(out, (a, lambda g: g * _sigmoid(x)))


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    s = _sigmoid(x)
    return _node(x * s, (a, lambda g: g * (s * (1.0 + x * (1.0 - s)))))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a, lambda g: g * (1.0 - out * out)))


# -- reductions and shape --------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _node(out, (a, vjp))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)

    return _node(np.cumsum(a.value, axis=axis), (a, vjp))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(y, (a, lambda g: y * (g - (g * y).sum(axis=axis, keepdims=True))))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(a.shape)))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    basic = _is_basic(index)

    def vjp(g):
        out = np.zeros(a.shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return out

    return _node(a.value[index], (a, vjp))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def take_along_axis(a, indices: np.ndarray, axis: int) -> Tensor:
    a = as_tensor(a)

    unique = indices.shape[axis] == 1

    def vjp(g):
        out = np.zeros(a.shape)
        if unique:
            np.put_along_axis(out, indices, g, axis=axis)
        else:
            idx = list(np.indices(indices.shape, sparse=True))
            idx[axis] = indices
            np.add.at(out, tuple(idx), g)
        return out

    return _node(np.take_along_axis(a.value, indices, axis=axis), (a, vjp))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)
    links = []
    for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        links.append((p, vjp))
    return _node(np.concatenate([p.value for p in parts], axis=axis), *links)


# -- driver ----------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
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
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Tensor, wrt: Iterable[Tensor], seed: np.ndarray | None = None) -> list[np.ndarray]:
    """Reverse-mode gradients of ``output`` with respect to each of ``wrt``.

    ``seed`` is the cotangent of ``output``; it defaults to 1 and must be
    given when ``output`` is not a scalar.
    """
    wrt = list(wrt)
    if seed is None:
        if output.value.size != 1:
            raise ValueError("seed is required for non-scalar outputs")
        seed = np.ones(output.shape)
    grads: dict[int, np.ndarray] = {id(output): np.asarray(seed, dtype=np.float64)}
    for node in reversed(_topological(output)):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return [grads.get(id(w), np.zeros(w.shape)) for w in wrt]
