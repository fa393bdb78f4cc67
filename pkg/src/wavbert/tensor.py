"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation appends its output node to the active Tape.
backward() replays the tape in reverse record order, so two identical
forward passes produce bitwise-identical gradients. Parameter gradients
accumulate across backward calls until zero_grads() is invoked.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import ContractError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def record(self, node: "Tensor"):
        self._nodes.append(node)

    def clear(self):
        """Drop all recorded nodes and their adjoint closures."""
        for node in self._nodes:
            node._parents = ()
            node.grad = None
        self._nodes.clear()

    def __len__(self):
        return len(self._nodes)

    @property
    def nodes(self):
        return self._nodes


_active_tape = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    return _active_tape


@contextlib.contextmanager
def fresh_tape():
    """Run a training/eval step on its own tape."""
    global _active_tape
    prev = _active_tape
    _active_tape = Tape()
    try:
        yield _active_tape
    finally:
        _active_tape.clear()
        _active_tape = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float64 array, optionally tracked on the tape.

    A leaf tensor with requires_grad=True is a trainable parameter; its
    .grad buffer accumulates adjoints across backward() calls.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
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

    def accumulate_grad(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*inputs: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in inputs)


def _make_node(data: np.ndarray, parents: Sequence[tuple]) -> Tensor:
    """Create an op output, recording it on the active tape when tracked."""
    out = Tensor(data)
    live = tuple((p, fn) for p, fn in parents if p.requires_grad)
    if _grad_enabled and live:
        out.requires_grad = True
        out._parents = live
        _active_tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    return _make_node(data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    return _make_node(data, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def scale(a: Tensor, s: float) -> Tensor:
    return _make_node(a.data * s, [(a, lambda g: g * s)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions not broadcastable: {a.shape} x {b.shape}") from exc

    def grad_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def grad_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _make_node(data, [(a, grad_a), (b, grad_b)])


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make_node(data, [(a, lambda g: np.transpose(g, inv))])


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape).copy()  # copy: no aliased views in v1
    old = a.data.shape
    return _make_node(data, [(a, lambda g: g.reshape(old))])


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def grad_fn(g, lo=lo, hi=hi):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        parents.append((t, grad_fn))
    return _make_node(data, parents)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` elements from `start` along `axis` (a copy)."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return full

    return _make_node(data, [(a, grad_fn)])


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def grad_fn(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return _make_node(data, [(a, grad_fn)])


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis), 1.0 / n)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make_node(data, [(a, lambda g: g * data * (1.0 - data))])


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    data = x * cdf

    def grad_fn(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return g * (cdf + x * pdf)

    return _make_node(data, [(a, grad_fn)])


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax received non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (g - dot) * data

    return _make_node(data, [(a, grad_fn)])


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise NumericError("log_softmax received non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def grad_fn(g):
        return g - np.exp(data) * g.sum(axis=axis, keepdims=True)

    return _make_node(data, [(a, grad_fn)])


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True with a constant (zero gradient there)."""
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, value, a.data)
    return _make_node(data, [(a, lambda g: np.where(mask, 0.0, g))])


def embedding_lookup(table: Tensor, ids, frozen_rows: Iterable[int] = ()) -> Tensor:
    """Gather rows of `table`; `frozen_rows` (e.g. PAD) never receive gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]
    frozen = tuple(frozen_rows)

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        for r in frozen:
            gt[r] = 0.0
        return gt

    return _make_node(data, [(table, grad_fn)])


def pick(a: Tensor, ids) -> Tensor:
    """Select a[i, ids[i]] for each row i of a 2-D tensor."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, ids]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[rows, ids] = g
        return full

    return _make_node(data, [(a, grad_fn)])


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def grad_x(g):
        gg = g * gain.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        return inv * (gg - m1 - xhat * m2)

    def grad_gain(g):
        return _unbroadcast(g * xhat, gain.data.shape)

    def grad_bias(g):
        return _unbroadcast(g, bias.data.shape)

    return _make_node(data, [(x, grad_x), (gain, grad_gain), (bias, grad_bias)])


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    data = a.data * keep
    return _make_node(data, [(a, lambda g: g * keep)])


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Optional[Tape] = None):
    """Populate .grad on every parameter reachable from `loss`.

    Replays the tape in reverse record order; unrelated entries receive no
    gradient and contribute nothing. Parameter gradients accumulate across
    calls; intermediate node gradients are transient per call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = tape or _active_tape
    for node in tape.nodes:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None or not node._parents:
            continue
        for parent, fn in node._parents:
            g = fn(node.grad)
            if parent._parents:
                # transient intermediate: plain accumulate
                parent.grad = g if parent.grad is None else parent.grad + g
            else:
                parent.accumulate_grad(g)
    if loss._parents:
        pass  # loss itself is an intermediate; its grad stays transient


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None
