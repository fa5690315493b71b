"""Tape-based reverse-mode autodiff over float64 numpy arrays.

A :class:`Graph` is an append-only list of nodes. Every primitive below takes
:class:`Var` handles, computes its value eagerly with numpy and records the
inputs plus whatever the backward rule needs. :func:`backward` walks the tape
in reverse and returns one gradient per registered parameter.

Broadcasting is deliberately narrow: binary elementwise ops accept operands of
equal shape, a scalar, or a rank-1 vector matching the last axis (a bias added
to every row). Scaling each row by its own weight is the separate op
:func:`scale_rows`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
L2_EPS = 1e-8


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    saved: dict = field(default_factory=dict)


class Var:
    """Handle to one node of a graph."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        node = self.graph.nodes[self.id]
        return f"Var(id={self.id}, op={node.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Append-only computation tape.

    With ``debug=True`` every op output is checked for NaN/Inf and a
    :class:`NonFiniteError` naming the op is raised on the first offender.
    """

    def __init__(self, debug: bool = False):
        self.debug = debug
        self.nodes: list[Node] = []
        self.param_ids: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, op: str, inputs: Sequence[Var], value, saved=None) -> Var:
        value = np.asarray(value, dtype=DTYPE)
        if self.debug and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"op {op!r} (node {len(self.nodes)}) produced non-finite values")
        ids = tuple(v.id for v in inputs)
        node_id = len(self.nodes)
        assert all(i < node_id for i in ids)
        self.nodes.append(Node(op, ids, value, saved or {}))
        return Var(self, node_id)

    def constant(self, value) -> Var:
        return self._push("const", (), np.array(value, dtype=DTYPE))

    def param(self, name: str, value) -> Var:
        if name in self.param_ids:
            raise KeyError(f"parameter {name!r} already registered")
        var = self._push("param", (), np.array(value, dtype=DTYPE))
        self.param_ids[name] = var.id
        return var


def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Var):
            return x.graph
    raise TypeError("at least one operand must be a Var")


def _lift(graph: Graph, x) -> Var:
    if isinstance(x, Var):
        if x.graph is not graph:
            raise ValueError("operands belong to different graphs")
        return x
    return graph.constant(x)


# backward rules: (node, upstream grad, input values) -> tuple of input grads
_BACKWARD: dict[str, Callable] = {}


def _rule(op: str):
    def register(fn):
        _BACKWARD[op] = fn
        return fn
    return register


def _check_broadcast(sa: tuple, sb: tuple) -> tuple:
    if sa == sb:
        return sa
    for big, small in ((sa, sb), (sb, sa)):
        if small == ():
            return big
        if len(small) == 1 and len(big) >= 1 and small[0] == big[-1]:
            return big
    raise ShapeError(f"incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _check_broadcast(a.shape, b.shape)
    return g._push("add", (a, b), a.value + b.value)


def sub(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _check_broadcast(a.shape, b.shape)
    return g._push("sub", (a, b), a.value - b.value)


def mul(a, b) -> Var:
    """Hadamard product."""
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _check_broadcast(a.shape, b.shape)
    return g._push("mul", (a, b), a.value * b.value)


hadamard = mul


def square(x: Var) -> Var:
    return x.graph._push("square", (x,), x.value * x.value)


def elementwise(op: str, a, b=None) -> Var:
    """Dispatch by name: ``add``, ``sub``, ``hadamard`` or ``square``."""
    if op == "square":
        return square(a)
    table = {"add": add, "sub": sub, "hadamard": mul, "mul": mul}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](a, b)


@_rule("add")
def _add_bw(node, g, vals):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


@_rule("sub")
def _sub_bw(node, g, vals):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)


@_rule("mul")
def _mul_bw(node, g, vals):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_rule("square")
def _square_bw(node, g, vals):
    return (2.0 * vals[0] * g,)


def scale_rows(x: Var, w) -> Var:
    """Multiply row ``x[..., i, :]`` by the scalar ``w[..., i]``."""
    g = _graph_of(x, w)
    x, w = _lift(g, x), _lift(g, w)
    if w.shape != x.shape[:-1]:
        raise ShapeError(f"row weights {w.shape} do not match rows of {x.shape}")
    return g._push("scale_rows", (x, w), x.value * w.value[..., None])


@_rule("scale_rows")
def _scale_rows_bw(node, g, vals):
    x, w = vals
    return g * w[..., None], np.sum(g * x, axis=-1)


def maximum(x: Var, floor: float) -> Var:
    """Clamp from below at a constant; gradient passes where ``x > floor``."""
    return x.graph._push("maximum", (x,), np.maximum(x.value, floor), {"floor": floor})


@_rule("maximum")
def _maximum_bw(node, g, vals):
    return (g * (vals[0] > node.saved["floor"]),)


# ---------------------------------------------------------------- activations

def sigmoid(x: Var) -> Var:
    # keeps relative precision in both tails without overflow
    return x.graph._push("sigmoid", (x,), np.exp(-np.logaddexp(0.0, -x.value)))


def tanh(x: Var) -> Var:
    return x.graph._push("tanh", (x,), np.tanh(x.value))


def relu(x: Var) -> Var:
    return x.graph._push("relu", (x,), np.maximum(x.value, 0.0))


def activation(op: str, x: Var) -> Var:
    table = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
    if op not in table:
        raise ValueError(f"unknown activation {op!r}")
    return table[op](x)


@_rule("sigmoid")
def _sigmoid_bw(node, g, vals):
    y = node.value
    return (g * y * (1.0 - y),)


@_rule("tanh")
def _tanh_bw(node, g, vals):
    y = node.value
    return (g * (1.0 - y * y),)


@_rule("relu")
def _relu_bw(node, g, vals):
    return (g * (vals[0] > 0),)


def exp(x: Var) -> Var:
    return x.graph._push("exp", (x,), np.exp(x.value))


def log(x: Var) -> Var:
    return x.graph._push("log", (x,), np.log(x.value))


def sqrt(x: Var) -> Var:
    return x.graph._push("sqrt", (x,), np.sqrt(x.value))


@_rule("exp")
def _exp_bw(node, g, vals):
    return (g * node.value,)


@_rule("log")
def _log_bw(node, g, vals):
    return (g / vals[0],)


@_rule("sqrt")
def _sqrt_bw(node, g, vals):
    return (g * 0.5 / node.value,)


def softmax(x: Var, axis: int = -1) -> Var:
    v = x.value
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return x.graph._push("softmax", (x,), e / e.sum(axis=axis, keepdims=True), {"axis": axis})


@_rule("softmax")
def _softmax_bw(node, g, vals):
    y = node.value
    axis = node.saved["axis"]
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Var:
    """``a @ b`` with ``b`` a matrix; ``a`` may carry leading batch axes."""
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if b.value.ndim != 2 or a.value.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return g._push("matmul", (a, b), a.value @ b.value)


@_rule("matmul")
def _matmul_bw(node, g, vals):
    a, b = vals
    ga = g @ b.T
    gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
    return ga, gb


def l2_normalize(x: Var, eps: float = L2_EPS) -> Var:
    """Divide each row (last axis) by ``max(||row||, eps)``."""
    norm = np.sqrt(np.sum(x.value * x.value, axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    return x.graph._push("l2_normalize", (x,), x.value / denom,
                         {"denom": denom, "clamped": norm <= eps})


@_rule("l2_normalize")
def _l2_normalize_bw(node, g, vals):
    y = node.value
    denom = node.saved["denom"]
    proj = np.where(node.saved["clamped"], 0.0, np.sum(g * y, axis=-1, keepdims=True))
    return ((g - y * proj) / denom,)


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def sum_(x: Var, axis: int | None = None) -> Var:
    axis = _norm_axis(axis, x.value.ndim)
    return x.graph._push("sum", (x,), np.sum(x.value, axis=axis), {"axis": axis})


def mean(x: Var, axis: int | None = None) -> Var:
    axis = _norm_axis(axis, x.value.ndim)
    return x.graph._push("mean", (x,), np.mean(x.value, axis=axis), {"axis": axis})


def max_(x: Var, axis: int | None = None) -> Var:
    """Max reduction; the gradient goes to the first maximal entry."""
    axis = _norm_axis(axis, x.value.ndim)
    v = x.value
    if axis is None:
        idx = np.argmax(v)
        return x.graph._push("max", (x,), v.reshape(-1)[idx], {"axis": None, "idx": idx})
    idx = np.argmax(v, axis=axis)
    out = np.take_along_axis(v, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    return x.graph._push("max", (x,), out, {"axis": axis, "idx": idx})


def reduce(op: str, x: Var, axis: int | None = None) -> Var:
    table = {"sum": sum_, "mean": mean, "max": max_}
    if op not in table:
        raise ValueError(f"unknown reduction {op!r}")
    return table[op](x, axis)


def _expand(g, axis, shape):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


@_rule("sum")
def _sum_bw(node, g, vals):
    return (np.array(_expand(g, node.saved["axis"], vals[0].shape)),)


@_rule("mean")
def _mean_bw(node, g, vals):
    shape = vals[0].shape
    axis = node.saved["axis"]
    k = np.prod(shape) if axis is None else shape[axis]
    return (np.array(_expand(g, axis, shape)) / k,)


@_rule("max")
def _max_bw(node, g, vals):
    x = vals[0]
    out = np.zeros_like(x)
    axis, idx = node.saved["axis"], node.saved["idx"]
    if axis is None:
        out.reshape(-1)[idx] = g
    else:
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
    return (out,)


# ---------------------------------------------------------------- structure

def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    if not xs:
        raise ShapeError("concat of an empty list")
    g = _graph_of(*xs)
    xs = [_lift(g, x) for x in xs]
    ndim = xs[0].value.ndim
    axis = _norm_axis(axis, ndim)
    for x in xs[1:]:
        s0, s1 = list(xs[0].shape), list(x.shape)
        if len(s1) != ndim:
            raise ShapeError(f"concat rank mismatch {xs[0].shape} vs {x.shape}")
        s0[axis] = s1[axis] = 0
        if s0 != s1:
            raise ShapeError(f"concat shape mismatch {xs[0].shape} vs {x.shape} on axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    return g._push("concat", xs, np.concatenate([x.value for x in xs], axis=axis),
                   {"axis": axis, "sizes": sizes})


@_rule("concat")
def _concat_bw(node, g, vals):
    cuts = np.cumsum(node.saved["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=node.saved["axis"]))


def slice_(x: Var, axis: int, start: int, stop: int) -> Var:
    axis = _norm_axis(axis, x.value.ndim)
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of size {x.shape[axis]}")
    sl = [slice(None)] * x.value.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    return x.graph._push("slice", (x,), x.value[sl], {"index": sl})


def split(x: Var, sizes: Sequence[int], axis: int = -1) -> list[Var]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis of size {x.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(slice_(x, axis, start, start + s))
        start += s
    return out


def select(x: Var, axis: int, i: int) -> Var:
    """Index one position along ``axis`` and drop that axis."""
    axis = _norm_axis(axis, x.value.ndim)
    sl = [slice(None)] * x.value.ndim
    sl[axis] = i
    sl = tuple(sl)
    return x.graph._push("slice", (x,), x.value[sl], {"index": sl})


@_rule("slice")
def _slice_bw(node, g, vals):
    out = np.zeros_like(vals[0])
    out[node.saved["index"]] = g
    return (out,)


def stack(xs: Sequence[Var], axis: int = 0) -> Var:
    g = _graph_of(*xs)
    xs = [_lift(g, x) for x in xs]
    if len({x.shape for x in xs}) != 1:
        raise ShapeError("stack needs equal shapes")
    axis = _norm_axis(axis, xs[0].value.ndim + 1)
    return g._push("stack", xs, np.stack([x.value for x in xs], axis=axis), {"axis": axis})


@_rule("stack")
def _stack_bw(node, g, vals):
    axis = node.saved["axis"]
    return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))


def gather(x: Var, indices, axis: int = 0) -> Var:
    indices = np.asarray(indices, dtype=np.intp)
    axis = _norm_axis(axis, x.value.ndim)
    return x.graph._push("gather", (x,), np.take(x.value, indices, axis=axis),
                         {"indices": indices, "axis": axis})


@_rule("gather")
def _gather_bw(node, g, vals):
    out = np.zeros_like(vals[0])
    axis = node.saved["axis"]
    np.add.at(np.moveaxis(out, axis, 0), node.saved["indices"], np.moveaxis(g, axis, 0))
    return (out,)


def reshape(x: Var, shape: Sequence[int]) -> Var:
    return x.graph._push("reshape", (x,), x.value.reshape(tuple(shape)))


@_rule("reshape")
def _reshape_bw(node, g, vals):
    return (g.reshape(vals[0].shape),)


# ---------------------------------------------------------------- backward

def backward(graph: Graph, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every registered parameter.

    Parameters the loss does not reach get zeros.
    """
    if loss.graph is not graph:
        raise ValueError("loss belongs to a different graph")
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    nodes = graph.nodes
    grads: list[np.ndarray | None] = [None] * (loss.id + 1)
    grads[loss.id] = np.ones_like(loss.value)
    for nid in range(loss.id, -1, -1):
        g = grads[nid]
        node = nodes[nid]
        if g is None or not node.inputs:
            continue
        vals = [nodes[i].value for i in node.inputs]
        in_grads = _BACKWARD[node.op](node, g, vals)
        for i, gi in zip(node.inputs, in_grads):
            if grads[i] is None:
                grads[i] = gi
            else:
                grads[i] = grads[i] + gi
    out = {}
    for name, pid in graph.param_ids.items():
        g = grads[pid] if pid <= loss.id else None
        out[name] = np.zeros_like(nodes[pid].value) if g is None else np.array(g, dtype=DTYPE)
    return out
