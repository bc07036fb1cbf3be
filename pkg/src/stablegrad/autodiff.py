"""Minimal dense tensors with reverse-mode differentiation.

Every differentiable primitive is a pair of numpy functions: a forward map
over the operand arrays and a backward map that turns the output gradient
into one gradient per operand. Outputs of primitives applied to tensors that
track gradients are appended to an implicit computation record; their
``node_id`` is the append position, so reverse ``node_id`` order is a valid
reverse topological order.

Only 1-D and 2-D tensors are supported (plus rank-0 scalars produced by
reductions). Binary elementwise ops require equal shapes; a Python number
operand is handled by :func:`scale` or :func:`shift`.

Subgradient conventions: ``relu'(0) = 0``, ``abs'(0) = 0``, ``sqrt'(0) = 0``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "ComputationRecord",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "relu",
    "tanh",
    "abs",
    "square",
    "sqrt",
    "matmul",
    "transpose",
    "reshape",
    "take",
    "sum",
    "mean",
    "softmax_cross_entropy",
    "elementwise",
    "backward",
    "grad",
    "record_of",
]

_node_counter = itertools.count()

ForwardFn = Callable[..., np.ndarray]
BackwardFn = Callable[..., tuple]


class Tensor:
    """A float64 array that can participate in reverse-mode differentiation.

    Tensors are treated as immutable once constructed. ``grad`` is filled in
    by :func:`backward`.
    """

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "node_id",
        "op",
        "parents",
        "_fwd",
        "_bwd",
        "_kw",
    )

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"only 0-D, 1-D and 2-D tensors are supported, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._fwd: ForwardFn | None = None
        self._bwd: BackwardFn | None = None
        self._kw: dict = {}

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
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _apply(op: str, fwd: ForwardFn, bwd: BackwardFn, parents: Sequence[Tensor], **kw) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(fwd(*(p.data for p in parents), **kw), dtype=np.float64)
    out.grad = None
    out.node_id = next(_node_counter)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out.parents = tuple(parents)
        out._fwd = fwd
        out._bwd = bwd
        out._kw = kw
    else:
        out.requires_grad = False
        out.op = "leaf"
        out.parents = ()
        out._fwd = out._bwd = None
        out._kw = {}
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- binary elementwise -----------------------------------------------------


def _add_bwd(g, out, a, b):
    return g, g


def _sub_bwd(g, out, a, b):
    return g, -g


def _mul_bwd(g, out, a, b):
    return g * b, g * a


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _apply("add", np.add, _add_bwd, (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _apply("sub", np.subtract, _sub_bwd, (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _apply("mul", np.multiply, _mul_bwd, (a, b))


# --- unary elementwise ------------------------------------------------------


def _scale_fwd(a, c):
    return a * c


def _scale_bwd(g, out, a, c):
    return (g * c,)


def _shift_fwd(a, c):
    return a + c


def _shift_bwd(g, out, a, c):
    return (g,)


def _relu_fwd(a):
    return np.maximum(a, 0.0)


def _relu_bwd(g, out, a):
    return (g * (a > 0.0),)


def _tanh_bwd(g, out, a):
    return (g * (1.0 - out * out),)


def _abs_bwd(g, out, a):
    return (g * np.sign(a),)


def _square_fwd(a):
    return a * a


def _square_bwd(g, out, a):
    return (2.0 * a * g,)


def _sqrt_bwd(g, out, a):
    safe = np.where(out > 0.0, out, 1.0)
    return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)


def scale(a: Tensor, c: float) -> Tensor:
    return _apply("scale", _scale_fwd, _scale_bwd, (a,), c=float(c))


def shift(a: Tensor, c: float) -> Tensor:
    return _apply("shift", _shift_fwd, _shift_bwd, (a,), c=float(c))


def relu(a: Tensor) -> Tensor:
    return _apply("relu", _relu_fwd, _relu_bwd, (a,))


def tanh(a: Tensor) -> Tensor:
    return _apply("tanh", np.tanh, _tanh_bwd, (a,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _apply("abs", np.abs, _abs_bwd, (a,))


def square(a: Tensor) -> Tensor:
    return _apply("square", _square_fwd, _square_bwd, (a,))


def sqrt(a: Tensor) -> Tensor:
    return _apply("sqrt", np.sqrt, _sqrt_bwd, (a,))


_UNARY = {"relu": relu, "tanh": tanh, "abs": abs, "square": square, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, *args):
    """Dispatch an elementwise primitive by name.

    ``elementwise("scale", t, 2.0)`` and ``elementwise("add", a, b)`` are
    equivalent to calling :func:`scale` and :func:`add` directly.
    """
    if kind in _UNARY:
        (a,) = args
        return _UNARY[kind](a)
    if kind in _BINARY:
        a, b = args
        return _BINARY[kind](a, b)
    if kind == "scale":
        a, c = args
        return scale(a, c)
    if kind == "shift":
        a, c = args
        return shift(a, c)
    raise ValueError(f"unknown elementwise op {kind!r}")


# --- linear algebra and shape ops ------------------------------------------


def _matmul_bwd(g, out, a, b):
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b`` for ``a`` 2-D and ``b`` 2-D or 1-D."""
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _apply("matmul", np.matmul, _matmul_bwd, (a, b))


def _transpose_fwd(a):
    return a.T.copy()


def _transpose_bwd(g, out, a):
    return (g.T,)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D tensor, got shape {a.shape}")
    return _apply("transpose", _transpose_fwd, _transpose_bwd, (a,))


def _reshape_fwd(a, shape):
    return a.reshape(shape)


def _reshape_bwd(g, out, a, shape):
    return (g.reshape(a.shape),)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) > 2 or int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    return _apply("reshape", _reshape_fwd, _reshape_bwd, (a,), shape=shape)


def _take_fwd(a, start, stop):
    return a[start:stop].copy()


def _take_bwd(g, out, a, start, stop):
    full = np.zeros_like(a)
    full[start:stop] = g
    return (full,)


def take(a: Tensor, start: int, stop: int) -> Tensor:
    """Leading-axis slice ``a[start:stop]`` (rows of a matrix)."""
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"take: slice [{start}:{stop}] out of range for shape {a.shape}")
    return _apply("take", _take_fwd, _take_bwd, (a,), start=int(start), stop=int(stop))


# --- reductions and losses --------------------------------------------------


def _sum_fwd(a, axis):
    return np.sum(a, axis=axis)


def _sum_bwd(g, out, a, axis):
    if axis is None:
        return (np.full(a.shape, g, dtype=np.float64),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is not None and not 0 <= axis < a.ndim:
        raise ShapeError(f"sum: axis {axis} invalid for shape {a.shape}")
    return _apply("sum", _sum_fwd, _sum_bwd, (a,), axis=axis)


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


def _xent_fwd(logits, labels):
    z = np.atleast_2d(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(z.shape[0]), labels]
    return np.mean(logsumexp - picked)


def _xent_bwd(g, out, logits, labels):
    z = np.atleast_2d(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(z.shape[0]), labels] -= 1.0
    p *= g / z.shape[0]
    return (p.reshape(logits.shape),)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (B x C, or C for one sample)."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows = 1 if logits.ndim == 1 else logits.shape[0]
    if labels.shape != (rows,):
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0]} labels for logits of shape {logits.shape}")
    classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeError(f"softmax_cross_entropy: labels must lie in [0, {classes})")
    return _apply("softmax_xent", _xent_fwd, _xent_bwd, (logits,), labels=labels)


# --- reverse pass -----------------------------------------------------------


@dataclass
class ComputationRecord:
    """The recorded nodes reachable from a root, in append order."""

    nodes: list[Tensor]

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded output from its operands' stored data."""
        return [n._fwd(*(p.data for p in n.parents), **n._kw) for n in self.nodes]


def _reachable(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in seen or not t.requires_grad:
            continue
        seen[t.node_id] = t
        stack.extend(t.parents)
    return sorted(seen.values(), key=lambda t: t.node_id)


def record_of(root: Tensor) -> ComputationRecord:
    return ComputationRecord([t for t in _reachable(root) if t.op != "leaf"])


def backward(root: Tensor) -> None:
    """Fill ``grad`` of every gradient-tracking tensor reachable from ``root``.

    Gradients are overwritten, not accumulated across calls.
    """
    if root.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    nodes = _reachable(root)
    grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
    for t in reversed(nodes):
        g = grads.pop(t.node_id, None)
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g
        if t._bwd is None:
            continue
        parent_grads = t._bwd(g, t.data, *(p.data for p in t.parents), **t._kw)
        for p, pg in zip(t.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(p.node_id)
            grads[p.node_id] = pg if prev is None else prev + pg


def grad(root: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Return d(root)/d(t) for each ``t`` in ``wrt`` (zeros if unreachable)."""
    wrt = list(wrt)
    for t in wrt:
        t.grad = None
    backward(root)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in wrt]
