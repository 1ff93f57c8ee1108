"""Reverse-mode automatic differentiation on a flat tape of float64 arrays.

A Graph is an append-only list of nodes. Every node is created after its
parents, so the node list itself is a topological order and backward() is a
single reverse sweep. Graphs are rebuilt per training step (tape style);
nothing here is reused across steps.

All values are float64. Every exposed operation checks its output for
NaN/Inf so numeric trouble surfaces at the op that caused it, not three
modules later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_CLAMP = 1e-12


class AutodiffError(Exception):
    pass


class ContractError(AutodiffError):
    """An operation was called outside its contract (shapes, scalar loss, ...)."""


class NumericError(AutodiffError):
    """A NaN or Inf appeared in a node value or adjoint."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Node:
    """One tape entry: a value, its parent indices, and a vjp closure."""

    __slots__ = ("graph", "index", "op", "parents", "value", "adjoint", "vjp", "is_param", "name")

    def __init__(self, graph, index, op, parents, value, vjp, is_param=False, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.parents = parents  # tuple of parent node indices, all < index
        self.value = value
        self.adjoint = None
        self.vjp = vjp  # adjoint -> tuple of parent adjoint contributions
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, self.graph.lift(other))

    def __radd__(self, other):
        return add(self.graph.lift(other), self)

    def __sub__(self, other):
        return sub(self, self.graph.lift(other))

    def __rsub__(self, other):
        return sub(self.graph.lift(other), self)

    def __mul__(self, other):
        return mul(self, self.graph.lift(other))

    def __rmul__(self, other):
        return mul(self.graph.lift(other), self)

    def __truediv__(self, other):
        return div(self, self.graph.lift(other))

    def __rtruediv__(self, other):
        return div(self.graph.lift(other), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node({self.index}, op={self.op!r}, shape={self.value.shape})"


class Graph:
    """Append-only computation tape over float64 numpy arrays."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.check_finite = check_finite
        self._param_names: set[str] = set()

    def append(self, op, parents, value, vjp, is_param=False, name=None) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced by op {op!r} at node {len(self.nodes)}")
        node = Node(self, len(self.nodes), op, tuple(p.index for p in parents), value, vjp,
                    is_param=is_param, name=name)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        return self.append("const", (), value, None)

    def param(self, value, name: str) -> Node:
        if name in self._param_names:
            raise ContractError(f"parameter {name!r} added to the graph twice")
        self._param_names.add(name)
        return self.append("param", (), value, None, is_param=True, name=name)

    def add_params(self, params: "ParamSet") -> dict:
        """Add every tensor of a ParamSet as a leaf node; returns name -> Node."""
        return {name: self.param(arr, name) for name, arr in params.items()}

    def lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise ContractError("mixing nodes from two graphs")
            return x
        return self.const(x)


def _graph_of(*nodes: Node) -> Graph:
    g = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not g:
            raise ContractError("mixing nodes from two graphs")
    return g


# ---------------------------------------------------------------------------
# op catalog
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    val = a.value + b.value
    return g.append("add", (a, b), val,
                    lambda gr: (_unbroadcast(gr, a.shape), _unbroadcast(gr, b.shape)))


def sub(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    val = a.value - b.value
    return g.append("sub", (a, b), val,
                    lambda gr: (_unbroadcast(gr, a.shape), _unbroadcast(-gr, b.shape)))


def mul(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    val = a.value * b.value
    return g.append("mul", (a, b), val,
                    lambda gr: (_unbroadcast(gr * b.value, a.shape),
                                _unbroadcast(gr * a.value, b.shape)))


def div(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    val = a.value / b.value
    return g.append("div", (a, b), val,
                    lambda gr: (_unbroadcast(gr / b.value, a.shape),
                                _unbroadcast(-gr * a.value / (b.value * b.value), b.shape)))


def neg(a: Node) -> Node:
    return a.graph.append("neg", (a,), -a.value, lambda gr: (-gr,))


def matmul(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    val = a.value @ b.value
    return g.append("matmul", (a, b), val,
                    lambda gr: (gr @ b.value.T, a.value.T @ gr))


def sigmoid(a: Node) -> Node:
    x = a.value
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return a.graph.append("sigmoid", (a,), s, lambda gr: (gr * s * (1.0 - s),))


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return a.graph.append("tanh", (a,), t, lambda gr: (gr * (1.0 - t * t),))


def exp(a: Node) -> Node:
    e = np.exp(a.value)
    return a.graph.append("exp", (a,), e, lambda gr: (gr * e,))


def log(a: Node) -> Node:
    # input clamped at LOG_CLAMP so zero probabilities never produce -inf
    clamped = np.maximum(a.value, LOG_CLAMP)
    return a.graph.append("log", (a,), np.log(clamped), lambda gr: (gr / clamped,))


def softmax(a: Node) -> Node:
    """Softmax along the last axis, numerically shifted."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(gr):
        return ((gr - (gr * p).sum(axis=-1, keepdims=True)) * p,)

    return a.graph.append("softmax", (a,), p, vjp)


def sum_(a: Node, axis=None) -> Node:
    val = a.value.sum(axis=axis)

    def vjp(gr):
        if axis is None:
            return (np.broadcast_to(gr, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(gr, axis), a.shape).copy(),)

    return a.graph.append("sum", (a,), val, vjp)


def mean(a: Node, axis=None) -> Node:
    val = a.value.mean(axis=axis)
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(gr):
        if axis is None:
            return (np.broadcast_to(gr / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(gr, axis) / count, a.shape).copy(),)

    return a.graph.append("mean", (a,), val, vjp)


def maximum(a: Node, b: Node) -> Node:
    """Elementwise max; at ties the gradient goes to the first argument."""
    g = _graph_of(a, b)
    av, bv = np.broadcast_arrays(a.value, b.value)
    take_a = av >= bv
    val = np.where(take_a, av, bv)
    return g.append("maximum", (a, b), val,
                    lambda gr: (_unbroadcast(gr * take_a, a.shape),
                                _unbroadcast(gr * ~take_a, b.shape)))


def minimum(a: Node, b: Node) -> Node:
    """Elementwise min; at ties the gradient goes to the first argument."""
    g = _graph_of(a, b)
    av, bv = np.broadcast_arrays(a.value, b.value)
    take_a = av <= bv
    val = np.where(take_a, av, bv)
    return g.append("minimum", (a, b), val,
                    lambda gr: (_unbroadcast(gr * take_a, a.shape),
                                _unbroadcast(gr * ~take_a, b.shape)))


def where(mask, a: Node, b: Node) -> Node:
    """Select by a constant boolean mask (no gradient through the mask)."""
    g = _graph_of(a, b)
    m = np.asarray(mask, dtype=bool)
    mb = np.broadcast_to(m, np.broadcast_shapes(m.shape, a.shape, b.shape))
    val = np.where(mb, a.value, b.value)
    return g.append("where", (a, b), val,
                    lambda gr: (_unbroadcast(gr * mb, a.shape),
                                _unbroadcast(gr * ~mb, b.shape)))


def index_select(a: Node, indices) -> Node:
    """Select rows (axis 0) by an integer index array; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    val = a.value[idx]

    def vjp(gr):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, gr)
        return (out,)

    return a.graph.append("index_select", (a,), val, vjp)


def take_per_row(a: Node, col_indices) -> Node:
    """out[i] = a[i, col_indices[i]] for a 2-D node; backward scatter-adds."""
    if a.value.ndim != 2:
        raise ContractError(f"take_per_row expects a 2-D node, got shape {a.shape}")
    idx = np.asarray(col_indices, dtype=np.intp)
    rows = np.arange(a.value.shape[0])
    val = a.value[rows, idx]

    def vjp(gr):
        out = np.zeros_like(a.value)
        np.add.at(out, (rows, idx), gr)
        return (out,)

    return a.graph.append("take_per_row", (a,), val, vjp)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if a.value.ndim != 2:
        raise ContractError(f"slice_cols expects a 2-D node, got shape {a.shape}")
    val = a.value[:, start:stop]

    def vjp(gr):
        out = np.zeros_like(a.value)
        out[:, start:stop] = gr
        return (out,)

    return a.graph.append("slice_cols", (a,), val, vjp)


def concat(parts: list, axis: int = 0) -> Node:
    g = _graph_of(*parts)
    val = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(gr):
        return tuple(np.take(gr, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return g.append("concat", tuple(parts), val, vjp)


def reshape(a: Node, shape) -> Node:
    val = a.value.reshape(shape)
    return a.graph.append("reshape", (a,), val, lambda gr: (gr.reshape(a.shape),))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(graph: Graph, loss: Node) -> dict:
    """Reverse sweep from `loss`; returns {param name: gradient array}.

    Graph values are untouched; adjoints are reset at entry so a graph can be
    swept more than once.
    """
    if loss.value.shape not in ((), (1,)):
        raise ContractError(f"loss node must be scalar, got shape {loss.value.shape}")
    if graph.check_finite and not np.isfinite(loss.value).all():
        raise NumericError(f"loss node {loss.index} is not finite")
    for node in graph.nodes:
        node.adjoint = None
    loss.adjoint = np.ones_like(loss.value)
    for node in reversed(graph.nodes[: loss.index + 1]):
        gr = node.adjoint
        if gr is None or not node.parents:
            continue
        contribs = node.vjp(gr)
        for pi, contrib in zip(node.parents, contribs):
            if contrib is None:
                continue
            parent = graph.nodes[pi]
            if graph.check_finite and not np.all(np.isfinite(contrib)):
                raise NumericError(f"non-finite adjoint flowing into node {pi} (op {parent.op!r})")
            parent.adjoint = contrib if parent.adjoint is None else parent.adjoint + contrib
    grads = {}
    for node in graph.nodes:
        if node.is_param:
            grads[node.name] = node.adjoint if node.adjoint is not None else np.zeros_like(node.value)
    return grads


# ---------------------------------------------------------------------------
# parameters and optimizers
# ---------------------------------------------------------------------------

class ParamSet:
    """Named float64 tensors in a fixed insertion order."""

    def __init__(self, arrays: dict | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self.add(name, arr)

    def add(self, name: str, arr):
        if name in self._arrays:
            raise ContractError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.asarray(arr, dtype=np.float64)

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def total_size(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def copy(self) -> "ParamSet":
        return ParamSet({n: a.copy() for n, a in self._arrays.items()})


def flatten(grads: dict) -> np.ndarray:
    """Concatenate a gradient set into one flat vector, in iteration order."""
    if not grads:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in grads.values()])


def unflatten(vector: np.ndarray, template: ParamSet) -> dict:
    """Split a flat vector back into arrays shaped like `template`."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.size != template.total_size():
        raise ContractError(
            f"flat vector of length {vector.size} does not match parameter count {template.total_size()}")
    out, offset = {}, 0
    for name, arr in template.items():
        out[name] = vector[offset:offset + arr.size].reshape(arr.shape).copy()
        offset += arr.size
    return out


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m={n: np.zeros_like(a) for n, a in params.items()},
                     v={n: np.zeros_like(a) for n, a in params.items()})


def adam_step(params: ParamSet, grads: dict, state: AdamState) -> tuple[ParamSet, AdamState]:
    """One Adam update; returns fresh ParamSet and mutated state."""
    state.step += 1
    t = state.step
    new = ParamSet()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new.add(name, p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return new, state


def sgd_step(params: ParamSet, grads: dict, lr: float) -> ParamSet:
    new = ParamSet()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        new.add(name, p - lr * g)
    return new
