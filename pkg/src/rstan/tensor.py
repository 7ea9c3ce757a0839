"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a :class:`GraphNode` recording its
``op_kind``, its input tensors and whatever it saved for the backward pass.
Backward rules live in a registry keyed by ``op_kind`` rather than in
closures, so a recorded graph can be walked and inspected by tests::

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> loss = (x * x).sum()
    >>> loss.node.op_kind
    'sum'
    >>> backward(loss)
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_tensor_ids = itertools.count()
_node_ids = itertools.count()


class _Mode:
    grad_enabled = True
    check_finite = False


def set_check_finite(flag: bool) -> bool:
    """Toggle NaN/Inf checking on every op output; returns the old value."""
    old = _Mode.check_finite
    _Mode.check_finite = bool(flag)
    return old


def check_finite_enabled() -> bool:
    return _Mode.check_finite


@contextmanager
def no_grad():
    old = _Mode.grad_enabled
    _Mode.grad_enabled = False
    try:
        yield
    finally:
        _Mode.grad_enabled = old


def grad_enabled() -> bool:
    return _Mode.grad_enabled


@dataclass(eq=False)
class GraphNode:
    id: int
    op_kind: str
    inputs: tuple
    output_id: int
    saved: dict = field(default_factory=dict)

    @property
    def input_ids(self) -> list[int]:
        return [t.id for t in self.inputs]


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: GraphNode | None = None
        self.name = name
        self.id = next(_tensor_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.dtype == np.float64 else arr.astype(np.float64)
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.name = None
        t.id = next(_tensor_ids)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# recording and backward

BackwardRule = Callable[[GraphNode, np.ndarray], Sequence]
_BACKWARD: dict[str, BackwardRule] = {}


def backward_rule(op_kind: str):
    def deco(fn: BackwardRule) -> BackwardRule:
        _BACKWARD[op_kind] = fn
        return fn

    return deco


def registered_ops() -> list[str]:
    return sorted(_BACKWARD)


def record(op_kind: str, result: np.ndarray, inputs: Iterable[Tensor], **saved) -> Tensor:
    """Wrap ``result`` as a tensor and, if any input needs grad, append a node."""
    if _Mode.check_finite and not np.all(np.isfinite(result)):
        raise NumericError(f"non-finite value produced by {op_kind!r}")
    res = Tensor._wrap(np.asarray(result))
    inputs = tuple(inputs)
    if _Mode.grad_enabled and any(t.requires_grad for t in inputs):
        if op_kind not in _BACKWARD:
            raise ContractError(f"no backward rule registered for {op_kind!r}")
        res.requires_grad = True
        res.node = GraphNode(next(_node_ids), op_kind, inputs, res.id, saved)
    return res


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Gradients add into existing ``.grad`` arrays, so call ``zero_grad`` on
    parameters between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes: dict[int, GraphNode] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        n = t.node
        if n is None or n.id in nodes:
            continue
        nodes[n.id] = n
        stack.extend(n.inputs)

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.node is None and loss.requires_grad:
        leaves[loss.id] = loss
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        in_grads = _BACKWARD[node.op_kind](node, g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.node is None:
                leaves[t.id] = t
            prev = grads.get(t.id)
            grads[t.id] = gi if prev is None else prev + gi
    for tid, t in leaves.items():
        g = grads[tid]
        if _Mode.check_finite and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for tensor {t.name or tid}")
        t.grad = np.array(g, dtype=np.float64) if t.grad is None else t.grad + g


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, what: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{what}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return record("add", a.data + b.data, (a, b))


@backward_rule("add")
def _add_bw(node, g):
    a, b = node.inputs
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return record("sub", a.data - b.data, (a, b))


@backward_rule("sub")
def _sub_bw(node, g):
    a, b = node.inputs
    return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return record("mul", a.data * b.data, (a, b))


@backward_rule("mul")
def _mul_bw(node, g):
    a, b = node.inputs
    return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    return record("div", a.data / b.data, (a, b))


@backward_rule("div")
def _div_bw(node, g):
    a, b = node.inputs
    return unbroadcast(g / b.data, a.shape), unbroadcast(-g * a.data / (b.data * b.data), b.shape)


def elementwise(a, b, kind: str) -> Tensor:
    """``kind`` is ``"add"`` or ``"mul"``; ``b`` may broadcast against ``a``."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,))


@backward_rule("neg")
def _neg_bw(node, g):
    return (-g,)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return record("pow", a.data**p, (a,), p=float(p))


@backward_rule("pow")
def _pow_bw(node, g):
    (a,) = node.inputs
    p = node.saved["p"]
    return (g * p * a.data ** (p - 1),)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", out, (a,), out=out)


@backward_rule("exp")
def _exp_bw(node, g):
    return (g * node.saved["out"],)


def log(a) -> Tensor:
    a = as_tensor(a)
    return record("log", np.log(a.data), (a,))


@backward_rule("log")
def _log_bw(node, g):
    return (g / node.inputs[0].data,)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record("sqrt", out, (a,), out=out)


@backward_rule("sqrt")
def _sqrt_bw(node, g):
    return (g * 0.5 / node.saved["out"],)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return record("relu", np.maximum(a.data, 0.0), (a,))


@backward_rule("relu")
def _relu_bw(node, g):
    return (g * (node.inputs[0].data > 0),)


# ---------------------------------------------------------------------------
# reductions and shape

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    return record("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), axis=axis, keepdims=keepdims)


@backward_rule("sum")
def _sum_bw(node, g):
    (a,) = node.inputs
    axis = node.saved["axis"]
    if axis is not None and not node.saved["keepdims"]:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.data.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def max_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; gradient goes to the first maximal entry."""
    a = as_tensor(a)
    axis = axis % a.ndim
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis)
    if not keepdims:
        out = out.squeeze(axis)
    return record("max_axis", out, (a,), axis=axis, arg=arg, keepdims=keepdims)


@backward_rule("max_axis")
def _max_axis_bw(node, g):
    (a,) = node.inputs
    axis = node.saved["axis"]
    if not node.saved["keepdims"]:
        g = np.expand_dims(g, axis)
    out = np.zeros(a.shape)
    np.put_along_axis(out, node.saved["arg"], g, axis=axis)
    return (out,)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return record("reshape", out, (a,))


@backward_rule("reshape")
def _reshape_bw(node, g):
    return (g.reshape(node.inputs[0].shape),)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(ax % a.ndim for ax in axes)
    return record("transpose", a.data.transpose(axes), (a,), axes=axes)


@backward_rule("transpose")
def _transpose_bw(node, g):
    return (g.transpose(np.argsort(node.saved["axes"])),)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None
    return record("broadcast_to", np.ascontiguousarray(out), (a,))


@backward_rule("broadcast_to")
def _broadcast_bw(node, g):
    return (unbroadcast(g, node.inputs[0].shape),)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in ts]} on axis {axis}") from None
    sizes = [t.shape[axis] for t in ts]
    return record("concat", out, ts, axis=axis, sizes=sizes)


@backward_rule("concat")
def _concat_bw(node, g):
    splits = np.cumsum(node.saved["sizes"])[:-1]
    return tuple(np.split(g, splits, axis=node.saved["axis"]))


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    return record("index", np.array(a.data[idx]), (a,), idx=idx)


@backward_rule("index")
def _index_bw(node, g):
    out = np.zeros(node.inputs[0].shape)
    np.add.at(out, node.saved["idx"], g)
    return (out,)


# ---------------------------------------------------------------------------
# linear algebra and softmax

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading batch axes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return record("matmul", out, (a, b))


@backward_rule("matmul")
def _matmul_bw(node, g):
    a, b = node.inputs
    ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
    gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {a.ndim}")
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax input contains NaN or Inf")
    out = _softmax_np(a.data, axis)
    return record("softmax", out, (a,), axis=axis, out=out)


@backward_rule("softmax")
def _softmax_bw(node, g):
    y = node.saved["out"]
    axis = node.saved["axis"]
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return record("log_softmax", out, (a,), axis=axis, out=out)


@backward_rule("log_softmax")
def _log_softmax_bw(node, g):
    axis = node.saved["axis"]
    p = np.exp(node.saved["out"])
    return (g - p * g.sum(axis=axis, keepdims=True),)
