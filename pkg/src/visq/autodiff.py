"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward() walks
the recorded graph in reverse topological order and accumulates gradients
into every tensor with requires_grad. The op set is exactly what the
transformer needs: broadcast add/mul, (batched) matmul, reshape/transpose/
slice/concat, embedding gather, layer norm, softmax, GELU/ReLU, and a fused
masked cross-entropy. All ops preserve the input dtype, so the same graph
runs in float32 for training and float64 for finite-difference shadow
checks.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this (scalar) tensor through the recorded graph."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # only the handful of operator sugar the model code actually uses
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _track(parents: tuple[Tensor, ...]) -> bool:
    return any(p.requires_grad or p._parents for p in parents)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast up from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _track(parents):
        return Tensor(data, parents=parents, backward=backward)
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    out_data = a.data * c

    def backward(g):
        a._accumulate(g * c)

    return _make(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions broadcast (e.g. (B,T,d) @ (d,V))."""
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make(out_data, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out_data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _make(out_data, (a,), backward)


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing."""
    out_data = a.data[key]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[key] += g

    return _make(out_data, (a,), backward)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad or t._parents:
                t._accumulate(piece)

    return _make(out_data, tuple(tensors), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]))

    return _make(out_data, (table,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    eps = x.data.dtype.type(eps)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = gain.data * xhat + bias.data

    def backward(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad or bias._parents:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad or x._parents:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - inner))

    return _make(y, (x,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    d = x.data
    c = d.dtype.type(_GELU_C)
    a = d.dtype.type(_GELU_A)
    u = c * (d + a * d**3)
    t = np.tanh(u)
    out_data = 0.5 * d * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3.0 * a * d * d)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du))

    return _make(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return _make(out_data, (x,), backward)


def add_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a constant array (e.g. an attention mask); no gradient to c."""
    out_data = x.data + c

    def backward(g):
        x._accumulate(_unbroadcast(g, x.shape))

    return _make(out_data, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-softmax of target ids over positions where mask is 1.

    logits: (..., V); targets, mask: matching leading shape. Raises if the
    mask selects nothing.
    """
    mask = np.asarray(mask, dtype=logits.data.dtype)
    n = mask.sum()
    if n == 0:
        raise ValueError("cross_entropy: empty mask")
    flat_logits = logits.data.reshape(-1, logits.shape[-1])
    flat_targets = np.asarray(targets).reshape(-1)
    flat_mask = mask.reshape(-1)
    m = flat_logits.max(axis=-1, keepdims=True)
    e = np.exp(flat_logits - m)
    z = e.sum(axis=-1, keepdims=True)
    log_probs = flat_logits - m - np.log(z)
    nll = -log_probs[np.arange(len(flat_targets)), flat_targets]
    out_data = np.asarray((nll * flat_mask).sum() / n, dtype=logits.data.dtype)

    def backward(g):
        probs = e / z
        probs[np.arange(len(flat_targets)), flat_targets] -= 1.0
        probs *= (flat_mask / n)[:, None]
        logits._accumulate((g * probs).reshape(logits.shape))

    return _make(out_data, (logits,), backward)
