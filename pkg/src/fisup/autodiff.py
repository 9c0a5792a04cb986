"""Reverse-mode automatic differentiation over dense float64 arrays.

Small define-by-run engine: building a `Node` computes its value eagerly with
numpy, and `gradient` walks the graph in reverse. Backward rules are written
with the same polymorphic ops used in the forward pass, so passing
``create_graph=True`` returns gradients that are themselves nodes and can be
differentiated again (needed for losses that contain input-gradient terms).

All values are float64. Graphs are acyclic by construction; a node wrapped in
`stop_gradient` contributes zero derivative to everything above it.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Node",
    "leaf",
    "constant",
    "stop_gradient",
    "add",
    "mul",
    "div",
    "matmul",
    "relu",
    "tanh",
    "log",
    "sqrt",
    "softmax",
    "asum",
    "amean",
    "reshape",
    "concat",
    "broadcast_to",
    "narrow",
    "pick",
    "evaluate",
    "gradient",
    "ShapeError",
    "GradientError",
]


class ShapeError(ValueError):
    """Operands incompatible with an op's shape contract."""


class GradientError(ValueError):
    """gradient() called outside its contract (e.g. non-scalar loss)."""


def _as_value(x):
    if type(x) is np.ndarray and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


class Node:
    """One vertex of a computation graph: a float64 array plus provenance."""

    __slots__ = ("value", "op", "parents", "args", "requires_grad", "name")

    def __init__(self, value, op="constant", parents=(), args=None,
                 requires_grad=False, name=None):
        self.value = _as_value(value)
        self.op = op
        self.parents = parents
        self.args = args
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or self.op
        return f"Node({tag}, shape={self.value.shape}, grad={self.requires_grad})"

    # arithmetic sugar; non-Node operands are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        return asum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def leaf(value, requires_grad=True, name=None):
    """A graph input. Only leaves may be differentiated against."""
    return Node(value, op="leaf", requires_grad=requires_grad, name=name)


def constant(value, name=None):
    return Node(value, op="constant", name=name)


def _wrap(x):
    return x if isinstance(x, Node) else constant(x)


def _any_node(*xs):
    return any(isinstance(x, Node) for x in xs)


def _val(x):
    return x.value if isinstance(x, Node) else _as_value(x)


def _make(op, value, parents, args=None):
    parents = tuple(_wrap(p) for p in parents)
    rg = any(p.requires_grad for p in parents)
    return Node(value, op=op, parents=parents, args=args, requires_grad=rg)


def _unbroadcast(g, shape, *, _sum=None, _reshape=None):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    su = _sum if _sum is not None else (lambda x, axis, keepdims: np.sum(x, axis=axis, keepdims=keepdims))
    rs = _reshape if _reshape is not None else np.reshape
    gshape = g.shape if isinstance(g, Node) else np.shape(g)
    if gshape == tuple(shape):
        return g
    extra = len(gshape) - len(shape)
    if extra > 0:
        g = su(g, axis=tuple(range(extra)), keepdims=False)
        gshape = gshape[extra:]
    axes = tuple(i for i, (a, b) in enumerate(zip(gshape, shape)) if b == 1 and a != 1)
    if axes:
        g = su(g, axis=axes, keepdims=True)
    return rs(g, tuple(shape))


def _unbroadcast_poly(g, shape):
    if isinstance(g, Node):
        return _unbroadcast(g, shape,
                            _sum=lambda x, axis, keepdims: asum(x, axis=axis, keepdims=keepdims),
                            _reshape=lambda x, s: reshape(x, s))
    return _unbroadcast(g, shape)


# ---------------------------------------------------------------------------
# primitives: each returns values for plain arrays and Nodes for Node inputs


def add(a, b):
    a_node, b_node = isinstance(a, Node), isinstance(b, Node)
    if not (a_node or b_node):
        return _as_value(a) + _as_value(b)
    return _make("add", (a.value if a_node else _as_value(a)) +
                 (b.value if b_node else _as_value(b)), (a, b))


def mul(a, b):
    a_node, b_node = isinstance(a, Node), isinstance(b, Node)
    if not (a_node or b_node):
        return _as_value(a) * _as_value(b)
    return _make("mul", (a.value if a_node else _as_value(a)) *
                 (b.value if b_node else _as_value(b)), (a, b))


def div(a, b):
    a_node, b_node = isinstance(a, Node), isinstance(b, Node)
    if not (a_node or b_node):
        return _as_value(a) / _as_value(b)
    return _make("div", (a.value if a_node else _as_value(a)) /
                 (b.value if b_node else _as_value(b)), (a, b))


def matmul(a, b):
    a_node, b_node = isinstance(a, Node), isinstance(b, Node)
    av = a.value if a_node else _as_value(a)
    bv = b.value if b_node else _as_value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if not (a_node or b_node):
        return av @ bv
    return _make("matmul", av @ bv, (a, b))


def relu(x):
    if type(x) is np.ndarray:
        return np.maximum(x, 0.0)
    if isinstance(x, Node):
        return _make("relu", np.maximum(x.value, 0.0), (x,))
    return np.maximum(_as_value(x), 0.0)


def tanh(x):
    if type(x) is np.ndarray:
        return np.tanh(x)
    if isinstance(x, Node):
        return _make("tanh", np.tanh(x.value), (x,))
    return np.tanh(_as_value(x))


def log(x):
    if type(x) is np.ndarray:
        return np.log(x)
    if isinstance(x, Node):
        return _make("log", np.log(x.value), (x,))
    return np.log(_as_value(x))


def sqrt(x):
    if type(x) is np.ndarray:
        return np.sqrt(x)
    if isinstance(x, Node):
        return _make("sqrt", np.sqrt(x.value), (x,))
    return np.sqrt(_as_value(x))


def softmax(x, axis=-1):
    if isinstance(x, Node):
        return _make("softmax", _softmax_val(x.value, axis), (x,), args=axis)
    return _softmax_val(_as_value(x), axis)


def _softmax_val(v, axis):
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def asum(x, axis=None, keepdims=False):
    if type(x) is np.ndarray:
        return np.sum(x, axis=axis, keepdims=keepdims)
    if isinstance(x, Node):
        val = np.sum(x.value, axis=axis, keepdims=keepdims)
        return _make("sum", val, (x,), args=(axis, keepdims, x.value.shape))
    return np.sum(_as_value(x), axis=axis, keepdims=keepdims)


def amean(x, axis=None, keepdims=False):
    n = _val(x).size if axis is None else np.prod([_val(x).shape[a] for a in np.atleast_1d(axis)])
    return mul(asum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape):
    if type(x) is np.ndarray:
        return x.reshape(shape)
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if isinstance(x, Node):
        return _make("reshape", x.value.reshape(shape), (x,), args=x.value.shape)
    return _as_value(x).reshape(shape)


def _swap_last2(x):
    if type(x) is np.ndarray:
        return np.swapaxes(x, -1, -2)
    if isinstance(x, Node):
        return _make("swap2", np.swapaxes(x.value, -1, -2), (x,))
    return np.swapaxes(_as_value(x), -1, -2)


def _broadcast_to(x, shape):
    if type(x) is np.ndarray:
        return np.broadcast_to(x, tuple(shape))
    shape = tuple(shape)
    if isinstance(x, Node):
        return _make("bcast", np.broadcast_to(x.value, shape).copy(), (x,), args=x.value.shape)
    return np.broadcast_to(_as_value(x), shape)


def concat(parts, axis=-1):
    if _any_node(*parts):
        vals = [_val(p) for p in parts]
        sizes = [v.shape[axis] for v in vals]
        return _make("concat", np.concatenate(vals, axis=axis), tuple(parts), args=(axis, sizes))
    return np.concatenate([_as_value(p) for p in parts], axis=axis)


def broadcast_to(x, shape):
    return _broadcast_to(x, shape)


def narrow(x, axis, start, length):
    """Slice `length` entries starting at `start` along `axis`."""
    return _narrow(x, axis, start, length)


def _narrow(x, axis, start, length):
    idx = [slice(None)] * _val(x).ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    if isinstance(x, Node):
        return _make("narrow", x.value[idx], (x,), args=(axis, start, length, x.value.shape))
    return _as_value(x)[idx]


def stop_gradient(x):
    """Use a node's value as a constant: no derivative flows through it."""
    return Node(_val(x), op="constant", name="stopgrad")


def pick(x, onehot):
    """Select one entry along the last axis per row via a constant one-hot.

    This is the select-index operation expressed as mul+sum so its backward
    rule stays inside the primitive set.
    """
    return asum(mul(x, onehot), axis=-1)


# ---------------------------------------------------------------------------
# backward rules
#
# Each rule maps (upstream grad g, output node, parent values-or-nodes, args)
# to per-parent gradients. Rules are written with the polymorphic ops above,
# so they compute raw arrays on the fast path and graph nodes under
# create_graph.


def _vjp_add(g, out, a, b, args):
    return (_unbroadcast_poly(g, np.shape(_val(a))),
            _unbroadcast_poly(g, np.shape(_val(b))))


def _vjp_mul(g, out, a, b, args):
    return (_unbroadcast_poly(mul(g, b), np.shape(_val(a))),
            _unbroadcast_poly(mul(g, a), np.shape(_val(b))))


def _vjp_div(g, out, a, b, args):
    ga = div(g, b)
    gb = mul(mul(g, out), -1.0)
    gb = div(gb, b)
    return (_unbroadcast_poly(ga, np.shape(_val(a))),
            _unbroadcast_poly(gb, np.shape(_val(b))))


def _vjp_matmul(g, out, a, b, args):
    av, bv = _val(a), _val(b)
    ga = matmul(g, _swap_last2(b))
    gb = matmul(_swap_last2(a), g)
    if np.shape(_val(ga)) != av.shape:
        ga = _unbroadcast_poly(ga, av.shape)
    if np.shape(_val(gb)) != bv.shape:
        gb = _unbroadcast_poly(gb, bv.shape)
    return ga, gb


def _vjp_relu(g, out, x, args):
    mask = (_val(x) > 0).astype(np.float64)
    return (mul(g, mask),)


def _vjp_tanh(g, out, x, args):
    return (mul(g, add(1.0, mul(mul(out, out), -1.0))),)


def _vjp_log(g, out, x, args):
    return (div(g, x),)


def _vjp_sqrt(g, out, x, args):
    return (div(mul(g, 0.5), out),)


def _vjp_softmax(g, out, x, args):
    axis = args
    inner = asum(mul(g, out), axis=axis, keepdims=True)
    return (mul(out, add(g, mul(inner, -1.0))),)


def _vjp_sum(g, out, x, args):
    axis, keepdims, in_shape = args
    if axis is None:
        return (_broadcast_to(g, in_shape),)
    if not keepdims:
        kshape = list(in_shape)
        for a in np.atleast_1d(axis):
            kshape[a] = 1
        g = reshape(g, tuple(kshape))
    return (_broadcast_to(g, in_shape),)


def _vjp_reshape(g, out, x, args):
    return (reshape(g, args),)


def _vjp_swap2(g, out, x, args):
    return (_swap_last2(g),)


def _vjp_bcast(g, out, x, args):
    return (_unbroadcast_poly(g, args),)


def _vjp_concat(g, out, *parents, args):
    axis, sizes = args
    grads, start = [], 0
    for size in sizes:
        grads.append(_narrow(g, axis, start, size))
        start += size
    return tuple(grads)


def _vjp_narrow(g, out, x, args):
    axis, start, length, in_shape = args
    before = list(in_shape)
    before[axis] = start
    after = list(in_shape)
    after[axis] = in_shape[axis] - start - length
    parts = []
    if before[axis] > 0:
        parts.append(np.zeros(before))
    parts.append(g)
    if after[axis] > 0:
        parts.append(np.zeros(after))
    return (concat(parts, axis=axis) if len(parts) > 1 else g,)


_VJP = {
    "add": _vjp_add,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "matmul": _vjp_matmul,
    "relu": _vjp_relu,
    "tanh": _vjp_tanh,
    "log": _vjp_log,
    "sqrt": _vjp_sqrt,
    "softmax": _vjp_softmax,
    "sum": _vjp_sum,
    "reshape": _vjp_reshape,
    "swap2": _vjp_swap2,
    "bcast": _vjp_bcast,
    "concat": _vjp_concat,
    "narrow": _vjp_narrow,
}

_FORWARD = {
    "add": lambda vals, args: vals[0] + vals[1],
    "mul": lambda vals, args: vals[0] * vals[1],
    "div": lambda vals, args: vals[0] / vals[1],
    "matmul": lambda vals, args: vals[0] @ vals[1],
    "relu": lambda vals, args: np.maximum(vals[0], 0.0),
    "tanh": lambda vals, args: np.tanh(vals[0]),
    "log": lambda vals, args: np.log(vals[0]),
    "sqrt": lambda vals, args: np.sqrt(vals[0]),
    "softmax": lambda vals, args: _softmax_val(vals[0], args),
    "sum": lambda vals, args: np.sum(vals[0], axis=args[0], keepdims=args[1]),
    "swap2": lambda vals, args: np.swapaxes(vals[0], -1, -2),
    "concat": lambda vals, args: np.concatenate(vals, axis=args[0]),
}


def _topo(root):
    """Parents-before-children ordering via iterative DFS."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def evaluate(root):
    """Recompute the forward value of a graph from current leaf values."""
    for node in _topo(root):
        if node.op in ("leaf", "constant"):
            continue
        vals = [p.value for p in node.parents]
        if node.op == "reshape":
            node.value = vals[0].reshape(node.value.shape)
        elif node.op == "bcast":
            node.value = np.broadcast_to(vals[0], node.value.shape).copy()
        elif node.op == "narrow":
            axis, start, length, _ = node.args
            idx = [slice(None)] * vals[0].ndim
            idx[axis] = slice(start, start + length)
            node.value = vals[0][tuple(idx)]
        else:
            node.value = _as_value(_FORWARD[node.op](vals, node.args))
    return root.value


def gradient(loss, wrt, create_graph=False):
    """Reverse-mode derivatives of a scalar loss w.r.t. a set of leaves.

    Returns a dict mapping each requested leaf to its gradient (array, or
    node when ``create_graph`` is set so the result can appear in further
    losses). Leaves unreachable from the loss get zeros.
    """
    if not isinstance(loss, Node):
        raise GradientError("loss must be a Node")
    if loss.value.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.value.shape}")
    wrt = list(wrt)

    grads = {id(loss): constant(np.ones_like(loss.value)) if create_graph
             else np.ones_like(loss.value)}
    for node in reversed(_topo(loss)):
        g = grads.get(id(node))
        if g is None or not node.parents:
            continue
        del grads[id(node)]  # intermediates are not needed once propagated
        rule = _VJP[node.op]
        parents_in = node.parents if create_graph else tuple(p.value for p in node.parents)
        if node.op == "concat":
            pgrads = rule(g, node if create_graph else node.value, *parents_in, args=node.args)
        else:
            pgrads = rule(g, node if create_graph else node.value, *parents_in, node.args)
        for parent, pg in zip(node.parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else add(prev, pg)

    out = {}
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = constant(np.zeros_like(w.value)) if create_graph else np.zeros_like(w.value)
        out[w] = g
    return out
