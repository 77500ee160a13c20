"""Small dense-tensor core with reverse-mode differentiation.

Only the handful of operations the hierarchical GRU needs are provided:
matmul, broadcasting elementwise arithmetic, sigmoid/tanh/exp/log, slicing,
concatenation, reshapes, reductions and an embedding gather whose gradient
scatters back into the table.

Graphs are built by running ordinary Python code on :class:`Tensor` objects
(define-by-run). ``forward_backward`` evaluates such a graph and fills the
gradients of the :class:`ParamSlot` leaves it reaches.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericError

_state = {"dtype": np.float32, "dropout": True}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def dropout_disabled():
    old = _state["dropout"]
    _state["dropout"] = False
    try:
        yield
    finally:
        _state["dropout"] = old


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {what}")
    return arr


class Tensor:
    """An array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self, grad=None):
        backward(self, grad)


def tensor(data, requires_grad=False):
    arr = np.array(data, dtype=default_dtype())
    _check_finite(arr, "tensor()")
    return Tensor(arr, requires_grad=requires_grad)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, True, parents, backward_fn, op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("division by zero")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def square(x):
    x = as_tensor(x)

    def bw(g):
        return (2.0 * g * x.data,)

    return _make(x.data * x.data, (x,), bw, "square")


# -------------------------------------------------------------- nonlinearity


def sigmoid(x):
    x = as_tensor(x)
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bw, "sigmoid")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), bw, "tanh")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def bw(g):
        return (g * out,)

    return _make(out, (x,), bw, "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")

    def bw(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), bw, "log")


def clip(x, lo, hi):
    """Clamp values; the gradient is zero where clamping took effect."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return (g * inside,)

    return _make(out, (x,), bw, "clip")


# ----------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# ------------------------------------------------------------------ structure


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: {x.shape} -> {shape}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), bw, "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), bw, "transpose")


def getitem(x, idx):
    """Basic (non-fancy) indexing, e.g. ``x[:, 3, :]`` or ``x[:, a:b]``."""
    x = as_tensor(x)
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _make(np.ascontiguousarray(out), (x,), bw, "getitem")


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise DimensionError("concat: incompatible shapes " + str([x.shape for x in xs])) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(xs), bw, "concat")


def embedding(table, ids):
    """Gather rows of ``table`` for the integer array ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"token id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(out, (table,), bw, "embedding")


def detach(x):
    return Tensor(as_tensor(x).data, op="detach")


# -------------------------------------------------------------------- dropout


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0 or not _state["dropout"]:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep.astype(x.dtype)))


# ------------------------------------------------------------------- backward


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root, grad=None):
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=root.dtype)
    for node in reversed(_topo(root)):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        if node._parents:
            node.grad = None  # interior grads are not needed once pushed


# ----------------------------------------------------------------- parameters


@dataclass
class ParamSlot:
    """A named trainable array with its gradient and RMSProp accumulator."""

    name: str
    value: Tensor
    rms_cache: np.ndarray = None
    frozen: bool = False
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.rms_cache is None:
            self.rms_cache = np.zeros_like(self.value.data)
        if self.grad is None:
            self.grad = np.zeros_like(self.value.data)
        self.value.requires_grad = not self.frozen

    @classmethod
    def from_array(cls, name, array, frozen=False):
        return cls(name, Tensor(np.array(array, dtype=default_dtype())), frozen=frozen)

    @property
    def data(self):
        return self.value.data

    @property
    def shape(self):
        return self.value.shape

    def freeze(self, frozen=True):
        self.frozen = frozen
        self.value.requires_grad = not frozen


def forward_backward(graph: Callable[..., Tensor], slots: Iterable[ParamSlot], inputs: Mapping | None = None):
    """Run ``graph(**inputs)`` and backpropagate into ``slots``.

    Returns the scalar loss and a ``{name: grad}`` mapping. Frozen slots and
    slots the loss does not reach get zero gradients.
    """
    slots = list(slots)
    for s in slots:
        s.value.grad = None
    loss = graph(**(inputs or {}))
    if loss.data.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    backward(loss)
    grads = {}
    for s in slots:
        g = s.value.grad
        if s.frozen or g is None:
            g = np.zeros_like(s.value.data)
        _check_finite(g, f"gradient of {s.name}")
        s.grad = g
        s.value.grad = None
        grads[s.name] = g
    return float(loss.data), grads


def rmsprop_step(slots: Iterable[ParamSlot], lr=0.001, decay=0.9, eps=1e-8):
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for s in slots:
        if s.frozen:
            continue
        g = s.grad
        s.rms_cache *= decay
        s.rms_cache += (1.0 - decay) * g * g
        s.value.data -= lr * g / (np.sqrt(s.rms_cache) + eps)
    return slots


# -------------------------------------------------------------- verification


def gradient_check(graph, slots, inputs=None, tolerance=1e-4, eps=1e-3, richardson=True):
    """Compare analytic gradients with central finite differences.

    Runs in 64-bit with dropout off; slot values are restored afterwards.
    With ``richardson`` the central differences at steps ``eps`` and
    ``eps/2`` are combined as ``(4 D(eps/2) - D(eps)) / 3``, which cancels
    the leading truncation term and lets a larger step keep cancellation
    noise well below the tolerance on small gradient entries. The report
    holds the max of ``|a - n| / max(|a|, |n|, 1e-8)`` per slot.
    """
    slots = list(slots)
    saved = [(s.value.data, s.rms_cache) for s in slots]
    report = {}
    try:
        with precision(np.float64), dropout_disabled():
            for s in slots:
                s.value.data = s.value.data.astype(np.float64)

            def f():
                return float(graph(**(inputs or {})).data)

            _, grads = forward_backward(graph, slots, inputs)
            for s in slots:
                analytic = grads[s.name]
                numeric = np.zeros_like(analytic)
                if not s.frozen:
                    flat = s.value.data.reshape(-1)
                    for i in range(flat.size):
                        orig = flat[i]

                        def central(h):
                            flat[i] = orig + h
                            up = f()
                            flat[i] = orig - h
                            down = f()
                            flat[i] = orig
                            return (up - down) / (2 * h)

                        if richardson:
                            numeric.reshape(-1)[i] = (4 * central(eps / 2) - central(eps)) / 3
                        else:
                            numeric.reshape(-1)[i] = central(eps)
                denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
                err = np.abs(analytic - numeric) / denom
                report[s.name] = float(err.max()) if err.size else 0.0
    finally:
        for s, (value, cache) in zip(slots, saved):
            s.value.data = value
            s.rms_cache = cache
            s.grad = np.zeros_like(value)
    return GradCheckReport(report, tolerance)


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{name:<24s} {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"{'max':<24s} {self.max_error:.3e} ({'ok' if self.passed else 'FAIL'})")
        return "\n".join(lines)
