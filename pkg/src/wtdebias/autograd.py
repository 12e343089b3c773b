"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every value is a :class:`Tensor` holding a float64 ``numpy.ndarray``.  Operations
record their parents together with a closure that maps the output gradient to
parent gradients; :meth:`Tensor.backward` walks the graph in reverse
topological order.  The networks built on top of this are tiny, so the design
favours readability over speed.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_GUARD = 1e-12

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / inference)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """A node in the computation graph.

    ``requires_grad`` marks leaves whose gradient is wanted (parameters).
    ``frozen`` leaves never receive gradient, which is how stop-gradient and
    frozen first-stage weights are expressed.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_op(cls, value, parents: Sequence["Tensor"], backward) -> "Tensor":
        """Create an op output; ``backward(g)`` returns one gradient per parent."""
        out = cls(value)
        if _grad_enabled.get() and any(p.requires_grad and not p.frozen for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Stop-gradient: same value, no connection to the graph."""
        return Tensor(self.data.copy())

    def freeze(self) -> "Tensor":
        self.frozen = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward: output must be scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad and not node.frozen:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or parent.frozen or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar ---------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return Tensor.from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def pow(a, p) -> Tensor:
    """``a ** p``.  Non-integer scalar exponents and tensor exponents clamp the base to >= 1e-12."""
    a = as_tensor(a)
    if isinstance(p, Tensor):
        _check_broadcast("pow", a, p)
        base = np.maximum(a.data, LOG_GUARD)
        out = base ** p.data
        live = a.data > LOG_GUARD
        return Tensor.from_op(
            out, (a, p), lambda g: (g * p.data * base ** (p.data - 1.0) * live, g * out * np.log(base))
        )
    p = float(p)
    if p.is_integer():
        out = a.data ** p
        return Tensor.from_op(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))
    base = np.maximum(a.data, LOG_GUARD)
    live = a.data > LOG_GUARD
    return Tensor.from_op(base ** p, (a,), lambda g: (g * p * base ** (p - 1.0) * live,))


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("maximum", a, b)
    pick_a = a.data >= b.data
    return Tensor.from_op(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def where(mask, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return Tensor.from_op(np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask))


# -- elementwise unary ----------------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    safe = np.maximum(a.data, LOG_GUARD)
    live = a.data > LOG_GUARD
    return Tensor.from_op(np.log(safe), (a,), lambda g: (g / safe * live,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    live = a.data > 0
    return Tensor.from_op(a.data * live, (a,), lambda g: (g * live,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * _sigmoid(a.data),))


def abs_(a) -> Tensor:
    # subgradient at 0 is 0
    a = as_tensor(a)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    live = a.data >= lo
    return Tensor.from_op(np.maximum(a.data, lo), (a,), lambda g: (g * live,))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    live = (a.data >= lo) & (a.data <= hi)
    return Tensor.from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * live,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


# -- reductions -----------------------------------------------------------------
def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor.from_op(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def variance(a, axis=None, keepdims: bool = False) -> Tensor:
    """Biased (1/n) variance."""
    centred = a - mean(a, axis, keepdims=True)
    return mean(centred * centred, axis, keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (a,), back)


# -- linear algebra and shape ---------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return Tensor.from_op(out, (a, b), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return Tensor.from_op(out, ts, lambda g: np.split(g, sizes, axis=axis))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None
    return Tensor.from_op(out, ts, lambda g: [np.take(g, i, axis=axis) for i in range(len(ts))])


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(a.data[idx], (a,), back)


def take_rows(a, index) -> Tensor:
    """Gather rows ``a[index]``; gradient is scatter-added (embedding lookup)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"take_rows: index out of range for {a.shape[0]} rows")

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(a.data[index], (a,), back)


def scatter_rows(parts: Sequence[Tensor], indices: Sequence[np.ndarray], n: int) -> Tensor:
    """Assemble an ``n``-row tensor where ``parts[k]`` fills rows ``indices[k]``."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("scatter_rows: no parts")
    tail = parts[0].shape[1:]
    out = np.zeros((n,) + tail)
    for p, idx in zip(parts, indices):
        if p.shape[1:] != tail or p.shape[0] != len(idx):
            raise ShapeError(f"scatter_rows: part shape {p.shape} does not fit {len(idx)} rows of {tail}")
        out[idx] = p.data
    return Tensor.from_op(out, parts, lambda g: [g[idx] for idx in indices])


# -- composite losses -----------------------------------------------------------
def huber(residual, delta: float = 1.0) -> Tensor:
    """Elementwise Huber: 0.5 r^2 inside ``delta``, linear outside."""
    r = as_tensor(residual)
    ar = np.abs(r.data)
    inside = ar <= delta
    out = np.where(inside, 0.5 * r.data**2, delta * (ar - 0.5 * delta))
    return Tensor.from_op(out, (r,), lambda g: (g * np.where(inside, r.data, delta * np.sign(r.data)),))


def binary_cross_entropy_with_logits(logits, targets, weights=None) -> Tensor:
    """Mean (optionally weighted) BCE computed stably from logits."""
    x = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    per = np.logaddexp(0.0, x.data) - t * x.data
    norm = t.size
    return Tensor.from_op((w * per).sum() / norm, (x,), lambda g: (g * w * (_sigmoid(x.data) - t) / norm,))
