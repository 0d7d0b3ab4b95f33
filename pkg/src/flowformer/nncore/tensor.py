"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient accumulator.  Every
operation records its parent tensors and a local backward rule that maps the
incoming output gradient to per-parent gradients.  ``Tensor.backward()``
walks the graph in reverse topological order and accumulates gradients
additively into leaf tensors that require them.

Dtype follows the wrapped arrays: build in float64 when finite-difference
headroom is needed (gradient checks), float32 for normal compute.  Masked
attention scores use a large negative constant rather than -inf so exp()
underflows to an exact 0.0 without NaN hazards in the max-subtraction path.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

NEG_MASK_VALUE = -1e9

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardRule | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward: BackwardRule) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ---------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every reachable leaf with requires_grad.

        Accumulation is additive: a second backward() call doubles the
        gradients.  Deterministic for a fixed graph.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None or not node.requires_grad:
                continue
            if node.is_leaf():
                node._accumulate(grad)
                continue
            assert node._backward is not None
            for parent, pgrad in zip(node._parents, node._backward(grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    # out-of-place: pgrad may alias the upstream gradient
                    grads[key] = grads[key] + pgrad
                else:
                    grads[key] = pgrad

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _ensure(other, self.dtype))

    def __radd__(self, other):
        return add(_ensure(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _ensure(other, self.dtype))

    def __rsub__(self, other):
        return sub(_ensure(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _ensure(other, self.dtype))

    def __rmul__(self, other):
        return mul(_ensure(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _ensure(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_ensure(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _ensure(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor with a hierarchical name.

    Names are assigned when the owning model walks its modules; they must be
    unique within one model.
    """

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


def _ensure(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return Tensor._from_op(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return Tensor._from_op(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return Tensor._from_op(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    return Tensor._from_op(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires >= 2-d operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(data, (a, b), backward)


# -- shape manipulation --------------------------------------------------------


def reshape(t: Tensor, shape) -> Tensor:
    data = t.data.reshape(shape)
    return Tensor._from_op(data, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = t.data.transpose(axes)
    return Tensor._from_op(data, (t,), lambda g: (g.transpose(inverse),))


def getitem(t: Tensor, key) -> Tensor:
    data = t.data[key]

    def backward(g: np.ndarray):
        full = np.zeros_like(t.data)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._from_op(np.ascontiguousarray(data), (t,), backward)


def broadcast_to(t: Tensor, shape) -> Tensor:
    data = np.broadcast_to(t.data, shape)
    return Tensor._from_op(
        np.ascontiguousarray(data), (t,), lambda g: (_unbroadcast(g, t.shape),)
    )


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(data, tuple(tensors), backward)


# -- reductions ----------------------------------------------------------------


def tensor_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, t.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, t.shape).copy(),)

    return Tensor._from_op(np.asarray(data), (t,), backward)


def tensor_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = t.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([t.shape[a] for a in axes]))
    total = tensor_sum(t, axis=axis, keepdims=keepdims)
    return mul(total, _ensure(1.0 / count, t.dtype))


# -- pointwise nonlinearities ---------------------------------------------------


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    return Tensor._from_op(t.data * mask, (t,), lambda g: (g * mask,))


def sigmoid(t: Tensor) -> Tensor:
    # Stable piecewise evaluation avoids overflow in exp for large |x|.
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._from_op(out, (t,), lambda g: (g * out * (1.0 - out),))


def gelu(t: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g: np.ndarray):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return Tensor._from_op(out, (t,), backward)


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return Tensor._from_op(out, (t,), lambda g: (g * out,))


def log(t: Tensor) -> Tensor:
    return Tensor._from_op(np.log(t.data), (t,), lambda g: (g / t.data,))


def sqrt(t: Tensor) -> Tensor:
    out = np.sqrt(t.data)
    return Tensor._from_op(out, (t,), lambda g: (g * 0.5 / out,))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction for overflow stability."""
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._from_op(out, (t,), backward)


# -- lookups and losses ----------------------------------------------------------


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a [levels, dim] table by an integer index array."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise IndexError(
            f"embedding index out of range for table of size {table.shape[0]}"
        )
    data = table.data[indices]

    def backward(g: np.ndarray):
        full = np.zeros_like(table.data)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return Tensor._from_op(data, (table,), backward)


def binary_cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean BCE of probabilities against 0/1 targets.

    Probabilities are clipped away from {0, 1} by a dtype-dependent epsilon;
    the backward rule uses the clipped values, which keeps the loss and its
    gradient finite even for saturated inputs.
    """
    y = np.asarray(targets, dtype=probs.dtype)
    eps = 1e-7 if probs.dtype == np.float32 else 1e-12
    p = np.clip(probs.data, eps, 1.0 - eps)
    n = p.size
    data = np.asarray(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n, dtype=probs.dtype)

    def backward(g: np.ndarray):
        return (g * (p - y) / (p * (1.0 - p)) / n,)

    return Tensor._from_op(data, (probs,), backward)
