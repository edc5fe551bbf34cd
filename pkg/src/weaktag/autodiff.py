"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it together with a
closure that routes upstream gradients to its parents. Calling
:func:`backward` on a scalar loss walks the tape in reverse topological
order and accumulates ``.grad`` on every tensor that requires one.

Values are float32 by default; reductions accumulate in float64 before
casting back, which keeps long sums over blocks stable without doubling
the checkpoint size. Building a model in float64 (see ``init_params``)
gives the shadow precision used by finite-difference gradient checks.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

DTYPE = np.float32

# Named map of trainable tensors. Insertion order is the serialization and
# optimizer-state order, so it must be deterministic.
ParamSet = dict


class Tensor:
    """A node in the computation tape.

    Parameters
    ----------
    data : array-like
        Row-major numeric payload. Converted with ``np.asarray``; pass
        explicitly typed arrays to control precision.
    requires_grad : bool
        Leaf tensors with ``requires_grad=True`` receive gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast up from ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return Tensor(-a.data, parents=(a,), backward=backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=backward)


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer ``x @ weight + bias`` for ``x`` of shape (n, d_in)."""
    return add(matmul(x, weight), bias)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    return Tensor(out_data, parents=(x,), backward=backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # Two-branch form avoids exp overflow for large negative inputs.
    out_data = np.where(
        x.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x.data))),
        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))),
    ).astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def activation(x, kind: str) -> Tensor:
    """Elementwise nonlinearity, ``kind`` is ``"relu"`` or ``"sigmoid"``."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def log(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return Tensor(out_data, parents=(x,), backward=backward)


def clip_values(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; gradient passes only where no clamping occurred."""
    x = _as_tensor(x)
    out_data = np.clip(x.data, low, high)
    inside = (x.data >= low) & (x.data <= high)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * inside)

    return Tensor(out_data, parents=(x,), backward=backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = _as_tensor(x)
    in_shape = x.data.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(in_shape))

    return Tensor(x.data.reshape(shape), parents=(x,), backward=backward)


def sum_over(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return Tensor(out_data, parents=(x,), backward=backward)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum(dtype=np.float64).astype(x.data.dtype))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return Tensor(out_data, parents=(x,), backward=backward)


def mean_pool_time(x: Tensor) -> Tensor:
    """Average over the frame axis.

    Accepts a single block shaped (L, B) giving a (B,) vector, or a stack
    of blocks shaped (M, L, B) giving (M, B).
    """
    x = _as_tensor(x)
    if x.data.ndim not in (2, 3):
        raise ValueError(f"mean_pool_time expects (L, B) or (M, L, B), got {x.data.shape}")
    if x.data.shape[-2] == 0:
        raise ValueError("mean_pool_time got an empty frame axis")
    axis = x.data.ndim - 2
    length = x.data.shape[axis]
    out_data = x.data.mean(axis=axis, dtype=np.float64).astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            g = np.expand_dims(g, axis) / length
            x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return Tensor(out_data, parents=(x,), backward=backward)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``p`` and scales
    survivors by 1/(1-p); eval mode is the identity.

    The rng is consumed exactly once per call in train mode, so a replay
    with the same generator state reproduces the mask.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if mode == "eval":
        return x
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype) * x.data.dtype.type(scale)
    out_data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return Tensor(out_data, parents=(x,), backward=backward)


def _topo_order(root: Tensor) -> list:
    """Iterative depth-first topological sort of the tape under ``root``."""
    order, visited = [], set()
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
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-requiring leaf.

    ``loss`` must be scalar. Gradients add onto existing ``.grad`` values,
    so zero parameter grads between independent backward passes.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(_topo_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents:
            # Interior grads are only needed transiently.
            node.grad = None


def gradients(loss: Tensor, params: ParamSet) -> dict:
    """Return d(loss)/d(theta) for every named parameter as numpy arrays."""
    for p in params.values():
        p.zero_grad()
    backward(loss)
    grads = {}
    for name, p in params.items():
        grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    return grads


def zero_grads(params: ParamSet) -> None:
    for p in params.values():
        p.zero_grad()


def parameters(named: Iterable) -> ParamSet:
    """Build a ParamSet from (name, array) pairs, enforcing unique names."""
    out: ParamSet = {}
    for name, data in named:
        if name in out:
            raise ValueError(f"duplicate parameter name {name!r}")
        out[name] = Tensor(data, requires_grad=True)
    return out
