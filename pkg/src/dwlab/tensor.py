"""Small dense tensor with an explicit reverse-mode gradient tape.

Every operation is broadcasting-free: operands must have identical shapes
(``matmul`` follows the usual ``[n, k] @ [k, m]`` rule).  Use :func:`repeat_rows`
or :func:`reshape` when a shape change is needed.

A :class:`Tape` is created per forward pass.  Leaf tensors join it through
:meth:`Tape.watch`; every op whose operands belong to a tape is recorded on
that tape, and :meth:`Tape.backward` fills the ``grad`` buffers and consumes
the tape::

    tape = Tape()
    tape.watch(x)
    loss = tsum(mul(x, x))
    tape.backward(loss)     # x.grad == 2 * x.values
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are not conformable."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NumericError(FloatingPointError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: non-finite values in result")


class TapeError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("values", "grad", "_tape", "name")

    def __init__(self, values, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records operations for one forward pass; consumed by :meth:`backward`."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._watched: list[Tensor] = []
        self.consumed = False

    def watch(self, *tensors: Tensor) -> None:
        self._check_live()
        for t in tensors:
            if t._tape is not None and t._tape is not self and not t._tape.consumed:
                raise TapeError(f"{t!r} is already watched by another live tape")
            t._tape = self
            t.grad = None
            self._watched.append(t)

    def discard(self) -> None:
        """Drop the recording without computing gradients."""
        for t in self._watched:
            t._tape = None
        self._nodes.clear()
        self.consumed = True

    def _check_live(self) -> None:
        if self.consumed:
            raise TapeError("tape already consumed")

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        out._tape = self
        self._nodes.append((out, parents, backward))

    def backward(self, root: Tensor) -> None:
        self._check_live()
        if root.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
        if root._tape is not self:
            raise TapeError("root was not produced under this tape")

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
        for out, parents, fn in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or parent._tape is not self:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        for t in self._watched:
            t.grad = grads.get(id(t), np.zeros_like(t.values))
        for out, _, _ in self._nodes:
            out.grad = grads.get(id(out), np.zeros_like(out.values))

        self.consumed = True
        for t in self._watched:
            t._tape = None
        self._nodes.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*operands: Tensor) -> Tape | None:
    tape = None
    for t in operands:
        tp = t._tape
        if tp is None:
            continue
        if tp.consumed:
            raise TapeError(f"{t!r} belongs to a consumed tape")
        if tape is None:
            tape = tp
        elif tp is not tape:
            raise TapeError("operands belong to different tapes")
    return tape


def _finish(op: str, values: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericError(op)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out._tape = None
    out.name = None
    tape = _tape_of(*parents)
    if tape is not None:
        tape._record(out, parents, backward)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# -- element-wise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _finish("add", a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _finish("sub", a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _finish("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    c = float(c)
    return _finish("scale", a.values * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def absolute(a: Tensor) -> Tensor:
    av = a.values
    return _finish("abs", np.abs(av), (a,), lambda g: (g * np.sign(av),))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _finish("relu", np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    # split by sign so exp never overflows
    ex = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _finish("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.values)
    return _finish("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def log(a: Tensor) -> Tensor:
    av = a.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _finish("log", out, (a,), lambda g: (g / av,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into ``[lo, hi]``; the gradient is zero where clamping is active."""
    av = a.values
    inside = (av >= lo) & (av <= hi)
    return _finish("clip", np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor."""
    if a.values.ndim != 2:
        raise ShapeError("softmax", a.shape)
    z = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _finish("softmax", p, (a,), backward)


def normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-D tensor to unit Euclidean length."""
    if a.values.ndim != 2:
        raise ShapeError("normalize_rows", a.shape)
    norm = np.sqrt((a.values ** 2).sum(axis=1, keepdims=True) + eps)
    y = a.values / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _finish("normalize_rows", y, (a,), backward)


# -- linear algebra and shape --------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.values, b.values
    return _finish("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, shape)
    old = a.shape
    return _finish("reshape", a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Stack a 1-D tensor ``n`` times into an ``[n, len(a)]`` matrix."""
    if a.values.ndim != 1:
        raise ShapeError("repeat_rows", a.shape)
    return _finish("repeat_rows", np.tile(a.values, (n, 1)), (a,), lambda g: (g.sum(axis=0),))


def columns(a: Tensor, idx: int) -> Tensor:
    """Column ``idx`` of a 2-D tensor as a 1-D tensor."""
    if a.values.ndim != 2:
        raise ShapeError("columns", a.shape)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, idx] = g
        return (full,)

    return _finish("columns", a.values[:, idx].copy(), (a,), backward)


# -- reductions ---------------------------------------------------------------

def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _finish("sum", np.asarray(a.values.sum()), (a,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.values.sum(axis=axis)
    return _finish("sum", out, (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean", a.shape)
    return scale(tsum(a, axis), 1.0 / n)


def l1_norm(a: Tensor, axis: int | None = None) -> Tensor:
    return tsum(absolute(a), axis)


def squared_l2_norm(a: Tensor, axis: int | None = None) -> Tensor:
    return tsum(mul(a, a), axis)
