"""Small dense-array autodiff engine.

Every :class:`Value` carries its data, an optional forward-mode tangent, and
(when it depends on a differentiable leaf) a reverse-mode adjoint rule.
Tangents are themselves ``Value`` objects built from the same primitives, so a
JVP evaluated on live parameters can be differentiated once more in reverse
mode. That single level of nesting is all the engine supports.

The operation set is closed: matmul, add, sub, mul, scale, affine, tanh, silu,
sin, cos, sum, mean, sqnorm, concat, reshape, dot and stop_gradient.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "Value",
    "NonFiniteError",
    "ShapeError",
    "as_value",
    "const",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "affine",
    "tanh",
    "silu",
    "sin",
    "cos",
    "sum",
    "mean",
    "sqnorm",
    "concat",
    "reshape",
    "dot",
    "stop_gradient",
    "jvp",
    "grad",
    "value_and_grad",
]


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from its inputs."""


class ShapeError(ValueError):
    pass


class Value:
    """Immutable n-d float64 array node."""

    __slots__ = ("data", "tangent", "_parents", "_vjp", "_live", "op")

    def __init__(self, data, tangent=None, *, requires_grad=False, _parents=(), _vjp=None, op="leaf"):
        data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.tangent = tangent
        self._parents = _parents
        self._vjp = _vjp
        self._live = requires_grad or bool(_parents)
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Value(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


const = as_value


def _check(data: np.ndarray, op: str) -> np.ndarray:
    # a sum is non-finite iff some entry is (or the reduction overflows)
    if not np.isfinite(np.add.reduce(data, axis=None)):
        raise NonFiniteError(f"non-finite output from {op!r}")
    return data


def _node(data, op, parents, vjp, tangent):
    """Build an op output; graph bookkeeping is kept only for live parents."""
    _check(data, op)
    live = tuple(p for p in parents if p._live)
    if not live:
        return Value(data, tangent, op=op)
    return Value(data, tangent, _parents=parents, _vjp=vjp, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to the shape of the operand it belongs to."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _tsum(*terms):
    """Add tangent terms, skipping absent ones; None means a zero tangent."""
    out = None
    for t in terms:
        if t is None:
            continue
        out = t if out is None else add(out, t)
    return out


# -- binary elementwise -------------------------------------------------------


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data + b.data
    tan = _tsum(a.tangent, b.tangent)
    if tan is not None and tan.shape != out.shape:
        tan = add(tan, Value(np.zeros(out.shape)))
    return _node(
        out, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        tan,
    )


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data - b.data
    tan = None
    if a.tangent is not None or b.tangent is not None:
        tan = a.tangent
        if b.tangent is not None:
            tan = scale(b.tangent, -1.0) if tan is None else sub(tan, b.tangent)
        if tan.shape != out.shape:
            tan = add(tan, Value(np.zeros(out.shape)))
    return _node(
        out, "sub", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        tan,
    )


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data * b.data
    tan = _tsum(
        None if a.tangent is None else mul(a.tangent, _strip(b)),
        None if b.tangent is None else mul(_strip(a), b.tangent),
    )
    if tan is not None and tan.shape != out.shape:
        tan = add(tan, Value(np.zeros(out.shape)))
    return _node(
        out, "mul", (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        tan,
    )


def scale(a, c: float) -> Value:
    a = as_value(a)
    c = float(c)
    tan = None if a.tangent is None else scale(a.tangent, c)
    return _node(a.data * c, "scale", (a,), lambda g: (g * c,), tan)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Value:
    """``a @ b`` for 1-d and 2-d operands."""
    a, b = as_value(a), as_value(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul supports 1-d and 2-d operands only")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        a2 = a.data.reshape(1, -1) if a.ndim == 1 else a.data
        b2 = b.data.reshape(-1, 1) if b.ndim == 1 else b.data
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(a.shape) if a._live else None
        gb = (a2.T @ g2).reshape(b.shape) if b._live else None
        return ga, gb

    tan = _tsum(
        None if a.tangent is None else matmul(a.tangent, _strip(b)),
        None if b.tangent is None else matmul(_strip(a), b.tangent),
    )
    return _node(out, "matmul", (a, b), vjp, tan)


def affine(x, W, b) -> Value:
    """Row-batched affine map ``x @ W + b`` with ``W`` of shape (in, out)."""
    x, W, b = as_value(x), as_value(W), as_value(b)
    if W.ndim != 2 or b.shape != (W.shape[1],):
        raise ShapeError(f"affine expects W (in, out) and b (out,), got {W.shape}, {b.shape}")
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine input width {x.shape[-1]} != {W.shape[0]}")
    out = x.data @ W.data + b.data

    def vjp(g):
        x2 = x.data.reshape(-1, W.shape[0])
        g2 = g.reshape(-1, W.shape[1])
        gx = g @ W.data.T if x._live else None
        gW = x2.T @ g2 if W._live else None
        gb = g2.sum(axis=0) if b._live else None
        return gx, gW, gb

    tan = _tsum(
        None if x.tangent is None else matmul(x.tangent, _strip(W)),
        None if W.tangent is None else matmul(_strip(x), W.tangent),
        b.tangent,
    )
    if tan is not None and tan.shape != out.shape:
        tan = add(tan, Value(np.zeros(out.shape)))
    return _node(out, "affine", (x, W, b), vjp, tan)


# -- unary elementwise --------------------------------------------------------


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    tan = None
    if a.tangent is not None:
        y = tanh(_strip(a))
        tan = mul(sub(1.0, mul(y, y)), a.tangent)
    return _node(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),), tan)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _dsilu(a: Value, dy: np.ndarray) -> Value:
    # silu'(x) as a node; its adjoint needs silu''(x). No tangent rule:
    # second-order forward mode is outside the engine's scope.
    def vjp(g):
        x = a.data
        s = _sigmoid(x)
        return (g * s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s)),)

    return _node(dy, "dsilu", (a,), vjp, None)


def silu(a) -> Value:
    a = as_value(a)
    out, dy = _kernels.silu(a.data)
    tan = None if a.tangent is None else mul(_dsilu(_strip(a), dy), a.tangent)
    return _node(out, "silu", (a,), lambda g: (g * dy,), tan)


def _strip(a: Value) -> Value:
    """Same node without its tangent, for derivative factors inside tangent rules."""
    if a.tangent is None:
        return a
    if not a._live:
        return Value(a.data)
    return _node(a.data, "detach_tangent", (a,), lambda g: (g,), None)


def sin(a) -> Value:
    a = as_value(a)
    out = np.sin(a.data)
    tan = None if a.tangent is None else mul(cos(_strip(a)), a.tangent)
    return _node(out, "sin", (a,), lambda g: (g * np.cos(a.data),), tan)


def cos(a) -> Value:
    a = as_value(a)
    out = np.cos(a.data)
    tan = None if a.tangent is None else mul(scale(sin(_strip(a)), -1.0), a.tangent)
    return _node(out, "cos", (a,), lambda g: (-g * np.sin(a.data),), tan)


def reciprocal(a) -> Value:
    a = as_value(a)
    with np.errstate(divide="ignore"):
        out = 1.0 / a.data
    tan = None
    if a.tangent is not None:
        y = reciprocal(_strip(a))
        tan = mul(scale(mul(y, y), -1.0), a.tangent)
    return _node(out, "reciprocal", (a,), lambda g: (-g * out * out,), tan)


def log(a) -> Value:
    a = as_value(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    tan = None if a.tangent is None else mul(reciprocal(_strip(a)), a.tangent)
    return _node(out, "log", (a,), lambda g: (g / a.data,), tan)


# -- reductions ---------------------------------------------------------------


def _expand(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def sum(a, axis: int | None = None) -> Value:  # noqa: A001
    a = as_value(a)
    out = np.asarray(a.data.sum(axis=axis))
    tan = None if a.tangent is None else sum(a.tangent, axis)
    return _node(out, "sum", (a,), lambda g: (_expand(g, a.shape, axis),), tan)


def mean(a, axis: int | None = None) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = np.asarray(a.data.sum(axis=axis) / n)
    tan = None if a.tangent is None else mean(a.tangent, axis)
    return _node(out, "mean", (a,), lambda g: (_expand(g, a.shape, axis) / n,), tan)


def sqnorm(a, axis: int | None = None) -> Value:
    """Squared L2 norm, over everything or along ``axis``."""
    a = as_value(a)
    out = np.asarray((a.data * a.data).sum(axis=axis))
    tan = None if a.tangent is None else scale(sum(mul(_strip(a), a.tangent), axis), 2.0)
    return _node(out, "sqnorm", (a,), lambda g: (2.0 * _expand(g, a.shape, axis) * a.data,), tan)


def dot(a, b) -> Value:
    """Inner product along the last axis."""
    a, b = as_value(a), as_value(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot shape mismatch {a.shape} vs {b.shape}")
    out = np.asarray((a.data * b.data).sum(axis=-1))

    def vjp(g):
        g = np.expand_dims(g, -1)
        return g * b.data, g * a.data

    tan = _tsum(
        None if a.tangent is None else dot(a.tangent, _strip(b)),
        None if b.tangent is None else dot(_strip(a), b.tangent),
    )
    return _node(out, "dot", (a, b), vjp, tan)


def concat(values: Sequence, axis: int = -1) -> Value:
    """Concatenate along the last axis."""
    vals = [as_value(v) for v in values]
    if axis not in (-1, vals[0].ndim - 1):
        raise ShapeError("concat only supports the last axis")
    out = np.concatenate([v.data for v in vals], axis=-1)
    widths = np.cumsum([v.shape[-1] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, widths, axis=-1))

    tan = None
    if any(v.tangent is not None for v in vals):
        parts = [v.tangent if v.tangent is not None else Value(np.zeros(v.shape)) for v in vals]
        tan = concat(parts)
    return _node(out, "concat", tuple(vals), vjp, tan)


def reshape(a, shape) -> Value:
    a = as_value(a)
    out = a.data.reshape(shape)
    tan = None if a.tangent is None else reshape(a.tangent, shape)
    return _node(out, "reshape", (a,), lambda g: (g.reshape(a.shape),), tan)


def stop_gradient(v) -> Value:
    """Same data, but a constant for both JVP and reverse-mode."""
    v = as_value(v)
    return Value(v.data, None, op="stop_gradient")


# -- drivers ------------------------------------------------------------------


def jvp(f: Callable, inputs: Sequence, tangents: Sequence) -> tuple[Value, Value]:
    """Evaluate ``f(*inputs)`` and its directional derivative along ``tangents``.

    Inputs may be live ``Value`` leaves (for differentiating the JVP once more
    in reverse mode). The returned tangent is a zero array when ``f`` does not
    depend on the inputs.
    """
    if len(inputs) != len(tangents):
        raise ShapeError(f"{len(inputs)} inputs but {len(tangents)} tangents")
    primed = []
    for x, t in zip(inputs, tangents):
        x = as_value(x)
        t = as_value(t)
        if t.shape != x.shape:
            raise ShapeError(f"tangent shape {t.shape} does not match input {x.shape}")
        if x._live:
            primed.append(_node(x.data, "seed", (x,), lambda g: (g,), t))
        else:
            primed.append(Value(x.data, t, op="seed"))
    out = as_value(f(*primed))
    tan = out.tangent if out.tangent is not None else Value(np.zeros(out.shape))
    return Value(out.data, op="primal") if not out._live else out, tan


def _toposort(root: Value) -> list[Value]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._live and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Value, leaves: Sequence[Value]) -> list[np.ndarray]:
    """Reverse sweep from a scalar ``out``; adjoints live only in this call."""
    adj = {id(out): np.ones_like(out.data)}
    for node in reversed(_toposort(out)):
        g = adj.pop(id(node), None) if node._parents else adj.get(id(node))
        if g is None or not node._parents:
            continue
        for p, gp in zip(node._parents, node._vjp(g)):
            if not p._live:
                continue
            k = id(p)
            adj[k] = gp if k not in adj else adj[k] + gp
    grads = []
    for leaf in leaves:
        g = adj.get(id(leaf))
        grads.append(np.zeros(leaf.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape))
    return grads


def value_and_grad(scalar_f: Callable, params: Sequence) -> tuple[float, list[np.ndarray]]:
    leaves = [Value(np.asarray(p.data if isinstance(p, Value) else p, dtype=np.float64), requires_grad=True)
              for p in params]
    out = as_value(scalar_f(*leaves))
    if out.data.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {out.shape}")
    grads = backward(out, leaves) if out._live else [np.zeros(p.shape) for p in leaves]
    for g in grads:
        _check(g, "grad")
    return float(out.data), grads


def grad(scalar_f: Callable, params: Sequence) -> list[np.ndarray]:
    """Gradient of a scalar function with respect to each array in ``params``."""
    return value_and_grad(scalar_f, params)[1]
