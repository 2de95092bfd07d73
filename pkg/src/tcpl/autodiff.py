"""Dense-tensor reverse-mode differentiation and the SGD optimizer.

The graph is built eagerly from a closed set of primitives; every node stores
its float64 value, a zero-initialized gradient of the same shape, and a
vector-Jacobian closure. backward() walks a fixed reverse-topological order,
so gradient accumulation is deterministic and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DoubleBackward,
    NonFiniteGradient,
    NonFiniteLoss,
    NonScalarRoot,
    ShapeMismatch,
    UnknownPrimitive,
)

# Epsilon inside l2_norm_eps: keeps the L2 distance differentiable at zero,
# which the intra-sequence loss actively drives toward.
NORM_EPSILON = 1e-12


class GraphNode:
    """One value in the computation graph.

    value and grad are float64 ndarrays of identical shape; parents are the
    input nodes of the primitive that produced this node (empty for leaves).
    """

    __slots__ = ("value", "grad", "parents", "op", "_vjp", "_backward_done")

    def __init__(self, value, parents=(), op=None, vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self._vjp = vjp
        self._backward_done = False

    def __repr__(self):
        op = self.op or "leaf"
        return f"GraphNode({op}, shape={self.value.shape})"


def constant(value) -> GraphNode:
    """Leaf node holding data; its gradient is computed but never consumed."""
    return GraphNode(value)


def parameter(value) -> GraphNode:
    """Leaf node owning a private copy of `value`, meant to be optimized."""
    return GraphNode(np.array(value, dtype=np.float64, copy=True))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: GraphNode, b: GraphNode) -> GraphNode:
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        out = av @ bv

        def vjp(g):
            return g @ bv.T, av.T @ g

    elif av.ndim == 1 and bv.ndim == 2:
        if av.shape[0] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        out = av @ bv

        def vjp(g):
            return bv @ g, np.outer(av, g)

    elif av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        out = av @ bv

        def vjp(g):
            return np.outer(g, bv), av.T @ g

    else:
        raise ShapeMismatch(
            f"matmul supports 2d@2d, 1d@2d, 2d@1d; got {av.ndim}d @ {bv.ndim}d"
        )
    return GraphNode(out, (a, b), "matmul", vjp)


def add(a: GraphNode, b: GraphNode) -> GraphNode:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"add: {a.value.shape} vs {b.value.shape}")

    def vjp(g):
        return g, g

    return GraphNode(a.value + b.value, (a, b), "add", vjp)


def subtract(a: GraphNode, b: GraphNode) -> GraphNode:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"subtract: {a.value.shape} vs {b.value.shape}")

    def vjp(g):
        return g, -g

    return GraphNode(a.value - b.value, (a, b), "subtract", vjp)


def scalar_multiply(a: GraphNode, s) -> GraphNode:
    """Multiply a tensor by a one-element scalar node (floats auto-wrap)."""
    if not isinstance(s, GraphNode):
        s = constant(float(s))
    if s.value.size != 1:
        raise ShapeMismatch(f"scalar_multiply: scalar operand has shape {s.value.shape}")
    sval = float(s.value)
    av = a.value
    s_shape = s.value.shape

    def vjp(g):
        return g * sval, np.asarray(np.sum(g * av)).reshape(s_shape)

    return GraphNode(av * sval, (a, s), "scalar_multiply", vjp)


def relu(a: GraphNode) -> GraphNode:
    av = a.value

    def vjp(g):
        return (g * (av > 0.0),)

    return GraphNode(np.maximum(av, 0.0), (a,), "relu", vjp)


def mean_over_axis(a: GraphNode, axis: int = 0) -> GraphNode:
    av = a.value
    if not -av.ndim <= axis < av.ndim:
        raise ShapeMismatch(f"mean_over_axis: axis {axis} invalid for shape {av.shape}")
    n = av.shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, av.shape).copy(),)

    return GraphNode(np.mean(av, axis=axis), (a,), "mean_over_axis", vjp)


def sum_all(a: GraphNode) -> GraphNode:
    av = a.value

    def vjp(g):
        return (np.full(av.shape, float(g)),)

    return GraphNode(np.sum(av), (a,), "sum", vjp)


def l2_norm_eps(a: GraphNode) -> GraphNode:
    """sqrt(sum(a**2) + eps); strictly positive, differentiable everywhere."""
    av = a.value
    out = np.sqrt(np.sum(av * av) + NORM_EPSILON)

    def vjp(g):
        return (float(g) * av / out,)

    return GraphNode(out, (a,), "l2_norm_eps", vjp)


def softmax_log(a: GraphNode) -> GraphNode:
    """Log-softmax of a vector, stabilized with the max-shift trick."""
    av = a.value
    if av.ndim != 1:
        raise ShapeMismatch(f"softmax_log expects a vector, got shape {av.shape}")
    shifted = av - np.max(av)
    out = shifted - np.log(np.sum(np.exp(shifted)))
    softmax = np.exp(out)

    def vjp(g):
        return (g - softmax * np.sum(g),)

    return GraphNode(out, (a,), "softmax_log", vjp)


def hinge_max0(a: GraphNode) -> GraphNode:
    """max(0, x) on a scalar; subgradient 0 at and below the kink."""
    if a.value.size != 1:
        raise ShapeMismatch(f"hinge_max0 expects a scalar, got shape {a.value.shape}")
    av = a.value

    def vjp(g):
        return (g * (av > 0.0),)

    return GraphNode(np.maximum(av, 0.0), (a,), "hinge_max0", vjp)


def dot(a: GraphNode, b: GraphNode) -> GraphNode:
    av, bv = a.value, b.value
    if av.ndim != 1 or bv.ndim != 1 or av.shape != bv.shape:
        raise ShapeMismatch(f"dot: {av.shape} . {bv.shape}")

    def vjp(g):
        g = float(g)
        return g * bv, g * av

    return GraphNode(np.dot(av, bv), (a, b), "dot", vjp)


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "scalar_multiply": scalar_multiply,
    "relu": relu,
    "mean_over_axis": mean_over_axis,
    "sum": sum_all,
    "l2_norm_eps": l2_norm_eps,
    "softmax_log": softmax_log,
    "hinge_max0": hinge_max0,
    "dot": dot,
}


def apply_primitive(op_name: str, inputs: list[GraphNode], axis: int = 0) -> GraphNode:
    """Dispatch a primitive by name; `axis` only applies to mean_over_axis."""
    try:
        fn = _PRIMITIVES[op_name]
    except KeyError:
        raise UnknownPrimitive(f"unknown primitive {op_name!r}") from None
    if op_name == "mean_over_axis":
        return fn(*inputs, axis=axis)
    return fn(*inputs)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological_order(root: GraphNode) -> list[GraphNode]:
    """Iterative post-order: parents of a node always precede it."""
    order: list[GraphNode] = []
    visited: set[int] = set()
    stack: list[tuple[GraphNode, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if idx < len(node.parents):
            stack.append((node, idx + 1))
            child = node.parents[idx]
            if id(child) not in visited:
                stack.append((child, 0))
        else:
            order.append(node)
    return order


def backward(root: GraphNode) -> None:
    """Accumulate d(root)/d(node) into every reachable node's grad.

    The traversal order is a pure function of graph structure, so repeated
    runs produce bit-identical gradients.
    """
    if root.value.size != 1:
        raise NonScalarRoot(f"backward root must be scalar, got shape {root.value.shape}")
    if root._backward_done:
        raise DoubleBackward("backward() already ran on this root; reset first")
    root._backward_done = True
    order = _topological_order(root)
    root.grad = root.grad + np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(node.grad)):
            parent.grad = parent.grad + pg


def reset_graph(root: GraphNode) -> None:
    """Zero gradients and clear backward flags over the reachable graph."""
    for node in _topological_order(root):
        node.grad = np.zeros_like(node.value)
        node._backward_done = False


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def check_gradients(loss_builder, params, h: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_builder maps a list of parameter GraphNodes to a scalar root and must
    be deterministic given the parameter values. Returns the maximum relative
    error max(|a - n| / max(|a|, |n|, 1e-8)) over every parameter entry.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = [np.array(p, dtype=np.float64, copy=True) for p in params]

    def checked_root(nodes):
        root = loss_builder(nodes)
        if root.value.size != 1:
            raise NonScalarRoot("loss_builder must produce a scalar")
        if not np.isfinite(root.value):
            raise NonFiniteLoss("loss evaluation is not finite")
        return root

    def build(arrays):
        return checked_root([GraphNode(a.copy()) for a in arrays])

    nodes = [GraphNode(a.copy()) for a in base]
    root = checked_root(nodes)
    backward(root)
    analytic = [n.grad.copy() for n in nodes]

    max_err = 0.0
    for i in range(len(base)):
        flat_a = analytic[i].reshape(-1)
        for j in range(base[i].size):
            probes = [a.copy() for a in base]
            flat = probes[i].reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(build(probes).value)
            flat[j] = orig - h
            f_minus = float(build(probes).value)
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(flat_a[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_err = max(max_err, err)
    return max_err


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """SGD with momentum and decoupled-from-nothing (coupled) weight decay.

    Update per parameter: g' = g + wd*theta; v <- mu*v + g'; theta <- theta - lr*v.
    """

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @classmethod
    def for_params(cls, params, learning_rate, momentum=0.0, weight_decay=0.0):
        state = cls(learning_rate, momentum, weight_decay)
        state.velocity = [np.zeros_like(p.value) for p in params]
        return state


def sgd_step(params: list[GraphNode], state: OptimizerState) -> None:
    """Apply one SGD update to every parameter, then zero their gradients."""
    if not state.velocity:
        state.velocity = [np.zeros_like(p.value) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError("velocity count does not match parameter count")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient("parameter gradient contains NaN/Inf")
    for p, v in zip(params, state.velocity):
        g = p.grad + state.weight_decay * p.value
        v *= state.momentum
        v += g
        p.value -= state.learning_rate * v
        p.grad = np.zeros_like(p.value)
