"""Reverse-mode differentiation over dense float64 arrays.

The engine is deliberately small: values are vectors (or batches of
vectors stacked along a leading axis), every operation records its
parents and a backward rule, and ``backward`` walks the graph once in
reverse topological order. The one unusual feature is ``custom_op``,
which lets the backward rule disagree with the true derivative of the
forward function — the mechanism straight-through units are built on.
"""

from __future__ import annotations

import numpy as np


class GraphValue:
    """Node in a reverse-mode computation graph.

    ``value`` and ``grad`` always have identical shapes. Gradient
    accumulation is additive: a node consumed by several downstream ops
    receives the sum of their contributions.
    """

    __slots__ = ("value", "grad", "parents", "backward_rule")

    def __init__(self, value, parents=(), backward_rule=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"GraphValue(shape={self.value.shape}, leaf={not self.parents})"

    # Operator sugar for the common elementwise cases.
    def __add__(self, other):
        return add(self, other) if isinstance(other, GraphValue) else shift(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, GraphValue) else shift(self, -np.asarray(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, GraphValue) else scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(value):
    """Leaf node holding a constant (still receives a grad, never used)."""
    return GraphValue(value)


def _as_value(x):
    return x if isinstance(x, GraphValue) else GraphValue(x)


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ValueError(
            f"{op}: operand shapes {a.value.shape} and {b.value.shape} do not match"
        )


# ---------------------------------------------------------------------------
# Built-in forward ops. Each backward rule maps the upstream gradient to one
# gradient per parent, in parent order.
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_value(a), _as_value(b)
    _check_same_shape("add", a, b)
    return GraphValue(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_value(a), _as_value(b)
    _check_same_shape("sub", a, b)
    return GraphValue(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_value(a), _as_value(b)
    _check_same_shape("mul", a, b)
    av, bv = a.value, b.value
    return GraphValue(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    c = float(c)
    return GraphValue(a.value * c, (a,), lambda g: (g * c,))


def shift(a, c):
    """Add a constant (scalar or array broadcastable to ``a``)."""
    c = np.asarray(c, dtype=np.float64)
    out = a.value + c
    if out.shape != a.value.shape:
        raise ValueError(f"shift: constant shape {c.shape} broadcasts {a.value.shape} to {out.shape}")
    return GraphValue(out, (a,), lambda g: (g,))


def affine(x, w, b):
    """x @ w + b with x of shape (n,) or (rows, n), w (n, m), b (m,)."""
    xv, wv, bv = x.value, w.value, b.value
    if xv.shape[-1] != wv.shape[0] or bv.shape != (wv.shape[1],):
        raise ValueError(
            f"affine: incompatible shapes x{xv.shape} w{wv.shape} b{bv.shape}"
        )
    out = xv @ wv + bv

    if xv.ndim == 1:
        def rule(g):
            return (g @ wv.T, np.outer(xv, g), g)
    else:
        def rule(g):
            return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return GraphValue(out, (x, w, b), rule)


def tanh(x):
    t = np.tanh(x.value)
    return GraphValue(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x):
    v = x.value
    out = np.maximum(v, 0.0)
    return GraphValue(out, (x,), lambda g: (g * (v > 0.0),))


def sigmoid(x):
    s = _sigmoid(x.value)
    return GraphValue(s, (x,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(v):
    # Evaluated on the negative side to avoid overflow in exp.
    out = np.empty_like(v, dtype=np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def log(x):
    v = x.value
    if np.any(v <= 0.0):
        raise ValueError("log: inputs must be strictly positive")
    return GraphValue(np.log(v), (x,), lambda g: (g / v,))


def exp(x):
    e = np.exp(x.value)
    return GraphValue(e, (x,), lambda g: (g * e,))


def clamp(x, lo, hi):
    v = x.value
    out = np.clip(v, lo, hi)
    inside = (v >= lo) & (v <= hi)
    return GraphValue(out, (x,), lambda g: (g * inside,))


def softmax(x):
    """Softmax over the last axis."""
    v = x.value
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return GraphValue(s, (x,), rule)


def reduce_max(x):
    """Max over the last axis; ties route the gradient to the lowest index."""
    v = x.value
    out = v.max(axis=-1)
    idx = v.argmax(axis=-1)

    def rule(g):
        gx = np.zeros_like(v)
        if v.ndim == 1:
            gx[idx] = g
        else:
            np.put_along_axis(gx, idx[..., None], np.asarray(g)[..., None], axis=-1)
        return (gx,)

    return GraphValue(out, (x,), rule)


def concat(parts):
    """Concatenate along the last axis."""
    parts = [_as_value(p) for p in parts]
    widths = [p.value.shape[-1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=-1)
    splits = np.cumsum(widths)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=-1))

    return GraphValue(out, tuple(parts), rule)


def index_select(x, idx):
    """Select entries: ``x[idx]`` for vectors, ``x[r, idx[r]]`` per row for matrices."""
    v = x.value
    idx = np.asarray(idx)
    if v.ndim == 1:
        out = v[idx]

        def rule(g):
            gx = np.zeros_like(v)
            np.add.at(gx, idx, g)
            return (gx,)
    else:
        if idx.shape != (v.shape[0],):
            raise ValueError(f"index_select: need one index per row, got {idx.shape} for {v.shape}")
        rows = np.arange(v.shape[0])
        out = v[rows, idx]

        def rule(g):
            gx = np.zeros_like(v)
            gx[rows, idx] = g
            return (gx,)

    return GraphValue(out, (x,), rule)


def reduce_sum(x):
    v = x.value
    return GraphValue(np.asarray(v.sum()), (x,), lambda g: (np.broadcast_to(g, v.shape).copy(),))


def reduce_mean(x):
    v = x.value
    n = v.size
    return GraphValue(np.asarray(v.mean()), (x,), lambda g: (np.broadcast_to(g / n, v.shape).copy(),))


def squared_error(a, b):
    """Scalar sum of squared differences."""
    _check_same_shape("squared_error", a, b)
    d = a.value - b.value
    return GraphValue(np.asarray((d * d).sum()), (a, b), lambda g: (2.0 * d * g, -2.0 * d * g))


def custom_op(forward, backward, *inputs):
    """Node whose backward pass uses ``backward`` verbatim.

    ``forward`` maps input arrays to the output array; ``backward`` maps
    (upstream gradient, *input arrays) to one gradient per input. The
    declared backward is used regardless of the true derivative of
    ``forward`` — this is what straight-through estimators rely on.
    """
    inputs = tuple(_as_value(x) for x in inputs)
    values = tuple(x.value for x in inputs)
    out = forward(*values)

    def rule(g):
        grads = backward(g, *values)
        if len(grads) != len(inputs):
            raise ValueError(
                f"custom_op: backward returned {len(grads)} gradients for {len(inputs)} inputs"
            )
        for gv, x in zip(grads, inputs):
            if np.shape(gv) != x.value.shape:
                raise ValueError(
                    f"custom_op: gradient shape {np.shape(gv)} does not match input {x.value.shape}"
                )
        return grads

    return GraphValue(out, inputs, rule)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Backpropagate from a scalar loss; populates ``grad`` on reachable nodes."""
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")

    order = _topo_order(loss)
    loss.grad = loss.grad + np.ones_like(loss.value)
    for node in order:
        if node.backward_rule is None:
            continue
        for parent, g in zip(node.parents, node.backward_rule(node.grad)):
            parent.grad += g


def _topo_order(root):
    """Reverse topological order (root first), iteratively."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


# ---------------------------------------------------------------------------
# Parameters and optimizers
# ---------------------------------------------------------------------------

class ParamSet:
    """Named collection of leaf parameters with deterministic iteration order."""

    def __init__(self):
        self._params: dict[str, GraphValue] = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = GraphValue(np.array(value, dtype=np.float64))
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grads(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def copy_values(self):
        """Snapshot of parameter arrays, by name."""
        return {name: p.value.copy() for name, p in self._params.items()}


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step sees NaN or infinite gradients."""


def _gradient_norm(params):
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite is reported, not raised
        for _, p in params:
            total += float((p.grad * p.grad).sum())
        return np.sqrt(total)


class SGD:
    """Plain gradient descent with global-norm clipping."""

    def __init__(self, params, learning_rate, clip_norm=10.0):
        # params: iterable of (name, GraphValue); order fixes update order.
        self.params = list(params)
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm

    def step(self):
        scale_ = _prepare_step(self.params, self.clip_norm)
        for _, p in self.params:
            p.value -= self.learning_rate * scale_ * p.grad
            p.grad[...] = 0.0


class RMSProp:
    """Per-parameter adaptive step from a running squared-gradient average."""

    def __init__(self, params, learning_rate, decay=0.99, epsilon=1e-5, clip_norm=10.0):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self._avg = [np.zeros_like(p.value) for _, p in self.params]

    def step(self):
        scale_ = _prepare_step(self.params, self.clip_norm)
        for (_, p), s in zip(self.params, self._avg):
            g = scale_ * p.grad
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            p.value -= self.learning_rate * g / np.sqrt(s + self.epsilon)
            p.grad[...] = 0.0


def _prepare_step(params, clip_norm):
    """Validate gradients and return the global-norm clipping factor."""
    norm = _gradient_norm(params)
    if not np.isfinite(norm):
        bad = [name for name, p in params if not np.isfinite(p.grad).all()]
        raise NonFiniteGradientError(
            f"non-finite gradient in parameters {bad}; gradient norm {norm}"
        )
    if clip_norm is not None and norm > clip_norm:
        return clip_norm / norm
    return 1.0


def make_optimizer(kind, params, learning_rate, clip_norm=10.0):
    if kind == "sgd":
        return SGD(params, learning_rate, clip_norm=clip_norm)
    if kind == "rms":
        return RMSProp(params, learning_rate, clip_norm=clip_norm)
    raise ValueError(f"unknown optimizer {kind!r}")


def sgd_step(params, learning_rate, clip_norm=10.0):
    """One plain SGD update over a ParamSet; clears gradients afterwards."""
    SGD(params.items(), learning_rate, clip_norm=clip_norm).step()
