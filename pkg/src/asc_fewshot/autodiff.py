"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: a ``Tensor`` is row-major float64 storage plus an
optional gradient buffer, and the operator set is exactly what affine
encoders, contrastive losses and softmax weighting need. Graphs are
recorded eagerly as parent links with per-op backward closures;
``backward`` replays the graph once in reverse topological order and
*adds* the resulting adjoints into ``grad``, so repeated passes without
``zero_grad`` accumulate.

All tensors are 64-bit; desk-scale sizes make precision cheaper than
speed and let tests pin tight tolerances.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DegenerateInputError, DomainError, ShapeError

NORM_EPS = 1e-12

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure evaluation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """Dense float64 array with optional participation in the gradient tape.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` is either
    ``None`` or an ndarray of the same shape, populated by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the values with no tape attachment."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        _backward_pass(self)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_mean(self, axis)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def square(self) -> "Tensor":
        return square(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, _coerce(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, _coerce(other, self.shape))

    def __rsub__(self, other) -> "Tensor":
        return sub(_coerce(other, self.shape), self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, _coerce(other, self.shape))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, _coerce(-1.0, self.shape))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"


def _coerce(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape == ():
        arr = np.full(shape, float(arr))
    return Tensor(arr)


def _record(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    """Wrap an op result, attaching the backward closure if recording."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _topo_order(root: Tensor) -> list:
    """Nodes of the recorded graph, every operand before its result."""
    order: list = []
    seen: set = set()
    stack = [(root, False)]
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
    return order


def _backward_pass(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor with no recorded gradient path")

    adjoints = {id(loss): np.ones_like(loss.data)}
    order = _topo_order(loss)
    # Reverse topological order visits each node exactly once with its full
    # adjoint already accumulated; accumulation is never in place so shared
    # buffers coming out of backward closures stay safe.
    for node in reversed(order):
        adj = adjoints.pop(id(node), None)
        if adj is None:
            continue
        node.grad = adj.copy() if node.grad is None else node.grad + adj
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(adj)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            held = adjoints.get(pid)
            adjoints[pid] = pg if held is None else held + pg


# ---------------------------------------------------------------------------
# operators


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _record(data, (a, b), backward)


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {t.shape}")

    def backward(g):
        return (g.T,)

    return _record(t.data.T, (t,), backward)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g):
        return (g, g)

    return _record(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        return (g, -g)

    return _record(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def backward(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return _record(a.data * b.data, (a, b), backward)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0

    def backward(g):
        return (g * mask,)

    return _record(np.where(mask, t.data, 0.0), (t,), backward)


def exp(t: Tensor) -> Tensor:
    data = np.exp(t.data)

    def backward(g):
        return (g * data,)

    return _record(data, (t,), backward)


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0.0):
        raise DomainError("log requires strictly positive entries")

    def backward(g):
        return (g / t.data,)

    return _record(np.log(t.data), (t,), backward)


def square(t: Tensor) -> Tensor:
    def backward(g):
        return (g * (2.0 * t.data),)

    return _record(t.data * t.data, (t,), backward)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "exp": exp, "log": log, "square": square}


def elementwise(kind: str, *args: Tensor) -> Tensor:
    """Dispatch an elementwise op by name; binary kinds require equal shapes."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


def _check_axis(t: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {t.shape}")
    return axis % t.ndim


def reduce_sum(t: Tensor, axis: Optional[int] = None) -> Tensor:
    axis = _check_axis(t, axis)
    shape = t.shape

    if axis is None:
        def backward(g):
            return (np.full(shape, float(g.reshape(()))),)
        return _record(t.data.sum(), (t,), backward)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(t.data.sum(axis=axis), (t,), backward)


def reduce_mean(t: Tensor, axis: Optional[int] = None) -> Tensor:
    axis = _check_axis(t, axis)
    shape = t.shape
    count = t.data.size if axis is None else shape[axis]

    if axis is None:
        def backward(g):
            return (np.full(shape, float(g.reshape(())) / count),)
        return _record(t.data.mean(), (t,), backward)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g / count, axis), shape).copy(),)

    return _record(t.data.mean(axis=axis), (t,), backward)


def reduce(kind: str, t: Tensor, axis: Optional[int] = None) -> Tensor:
    """Dispatch a reduction by name ("sum" or "mean")."""
    if kind == "sum":
        return reduce_sum(t, axis)
    if kind == "mean":
        return reduce_mean(t, axis)
    raise ContractError(f"unknown reduce kind {kind!r}")


def softmax(t: Tensor) -> Tensor:
    """Stable softmax of a vector: positive entries summing to one.

    Computed with max subtraction, so uniform inputs map to exactly 1/n
    each and adding a constant to the input leaves the output unchanged
    up to rounding.
    """
    if t.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {t.shape}")
    shifted = t.data - t.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def backward(g):
        return ((g - float(g @ y)) * y,)

    return _record(y, (t,), backward)


def l2_normalize(t: Tensor) -> Tensor:
    """Scale a vector (or each row of a matrix) to unit euclidean norm."""
    if t.ndim == 1:
        norm = float(np.sqrt(t.data @ t.data))
        if norm < NORM_EPS:
            raise DegenerateInputError(f"cannot normalize a near-zero vector (norm {norm:.3e})")
        y = t.data / norm

        def backward(g):
            return ((g - y * float(g @ y)) / norm,)

        return _record(y, (t,), backward)

    if t.ndim == 2:
        norms = np.sqrt((t.data * t.data).sum(axis=1, keepdims=True))
        if np.any(norms < NORM_EPS):
            raise DegenerateInputError("cannot normalize a near-zero row (norm < 1e-12)")
        y = t.data / norms

        def backward(g):
            dots = (g * y).sum(axis=1, keepdims=True)
            return ((g - y * dots) / norms,)

        return _record(y, (t,), backward)

    raise ShapeError(f"l2_normalize expects a vector or matrix, got shape {t.shape}")


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Stack a length-c vector as n identical rows, shape (n, c)."""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got shape {v.shape}")

    def backward(g):
        return (g.sum(axis=0),)

    return _record(np.broadcast_to(v.data, (n, v.shape[0])), (v,), backward)


def broadcast_cols(v: Tensor, k: int) -> Tensor:
    """Repeat a length-n vector as k identical columns, shape (n, k)."""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_cols expects a vector, got shape {v.shape}")

    def backward(g):
        return (g.sum(axis=1),)

    return _record(np.broadcast_to(v.data[:, None], (v.shape[0], k)), (v,), backward)
