"""Reverse-mode automatic differentiation on an append-only tape.

Values are float64 numpy arrays. Every operation below accepts plain arrays
or :class:`Var` objects; if no argument is a ``Var`` the operation simply
returns the numpy result, so the same model code runs both traced and
untraced.

Vector-Jacobian products are written with these same operations. When
:func:`grad` is called with ``create_graph=True`` they receive ``Var``
arguments, so the adjoint computation is itself recorded on the tape and can
be differentiated again.

>>> tape = Tape()
>>> x = tape.var(3.0)
>>> (dx,) = grad(square(x), [x], create_graph=True)
>>> float(dx.value)
6.0
>>> (ddx,) = grad(dx, [x])
>>> float(ddx)
2.0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A value became undefined (division by zero, non-finite input)."""


@dataclass
class Node:
    kind: str
    args: tuple  # node index (int) for traced operands, ndarray for constants
    value: np.ndarray
    attrs: dict = field(default_factory=dict)


class Tape:
    """Append-only record of operations. Node inputs always precede the node."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def var(self, value) -> "Var":
        """Register a leaf (independent variable)."""
        self.nodes.append(Node("leaf", (), np.array(value, dtype=np.float64)))
        return Var(self, len(self.nodes) - 1)

    def _record(self, kind, args, value, attrs) -> "Var":
        packed = tuple(a.index if isinstance(a, Var) else a for a in args)
        self.nodes.append(Node(kind, packed, value, attrs))
        return Var(self, len(self.nodes) - 1)


class Var:
    __slots__ = ("tape", "index")
    __array_priority__ = 100.0  # make ndarray <op> Var defer to Var

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(#{self.index}, {self.tape.nodes[self.index].kind}, shape={self.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return index(self, key)


@dataclass(frozen=True)
class Op:
    forward: Callable
    vjp: Callable  # (g, out, *inputs, **attrs) -> tuple of adjoints (None = no gradient)


OPS: dict[str, Op] = {}


def _register(kind, forward, vjp):
    OPS[kind] = Op(forward, vjp)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def apply(kind: str, *args, **attrs):
    """Evaluate op ``kind``; record it if any argument is traced."""
    tape = None
    vals = []
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands belong to different tapes")
            vals.append(a.value)
        else:
            vals.append(np.asarray(a, dtype=np.float64))
    out = OPS[kind].forward(*vals, **attrs)
    if tape is None:
        return out
    consts = [a if isinstance(a, Var) else v for a, v in zip(args, vals)]
    return tape._record(kind, consts, out, attrs)


def _shape(x):
    return x.shape if isinstance(x, Var) else np.shape(x)


def _unbroadcast(g, shape):
    if _shape(g) == tuple(shape):
        return g
    return sum_to(g, shape)


def _binary_shape(a, b):
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- arithmetic

def _add_fwd(a, b):
    _binary_shape(a, b)
    return a + b


def _sub_fwd(a, b):
    _binary_shape(a, b)
    return a - b


def _mul_fwd(a, b):
    _binary_shape(a, b)
    return a * b


def _div_fwd(a, b):
    _binary_shape(a, b)
    if np.any(b == 0.0):
        raise NumericError("division by zero")
    return a / b


_register("add", _add_fwd, lambda g, out, need, a, b: (
    (_unbroadcast(g, _shape(a)) if need[0] else None),
    (_unbroadcast(g, _shape(b)) if need[1] else None)))
_register("sub", _sub_fwd, lambda g, out, need, a, b: (
    (_unbroadcast(g, _shape(a)) if need[0] else None),
    (_unbroadcast(neg(g), _shape(b)) if need[1] else None)))
_register("mul", _mul_fwd, lambda g, out, need, a, b: (
    (_unbroadcast(mul(g, b), _shape(a)) if need[0] else None),
    (_unbroadcast(mul(g, a), _shape(b)) if need[1] else None)))
_register("div", _div_fwd, lambda g, out, need, a, b: (
    (_unbroadcast(div(g, b), _shape(a)) if need[0] else None),
    (_unbroadcast(neg(mul(g, div(out, b))), _shape(b)) if need[1] else None)))
_register("neg", lambda a: -a, lambda g, out, need, a: (neg(g),))
_register("scale", lambda a, c: c * a, lambda g, out, need, a, c: (scale(g, c),))
_register("square", lambda a: a * a, lambda g, out, need, a: (mul(g, scale(a, 2.0)),))


def _sqrt_fwd(a):
    if np.any(a < 0):
        raise NumericError("sqrt of negative value")
    return np.sqrt(a)


_register("sqrt", _sqrt_fwd, lambda g, out, need, a: (div(scale(g, 0.5), out),))
_register("abs", np.abs, lambda g, out, need, a: (mul(g, np.sign(value_of(a))),))
_register("sign", np.sign, lambda g, out, need, a: (None,))
_register("exp", np.exp, lambda g, out, need, a: (mul(g, out),))
_register("log1p", np.log1p, lambda g, out, need, a: (div(g, add(a, 1.0)),))

# ---------------------------------------------------------------- elementwise nonlinearities

_register("tanh", np.tanh, lambda g, out, need, a: (mul(g, sub(1.0, square(out))),))


def _sigmoid_fwd(a):
    return np.exp(-np.logaddexp(0.0, -a))


_register("sigmoid", _sigmoid_fwd, lambda g, out, need, a: (mul(g, mul(out, sub(1.0, out))),))
_register("softplus", lambda a: np.logaddexp(0.0, a), lambda g, out, need, a: (mul(g, sigmoid(a)),))


def _elu_fwd(a):
    # expm1(a) >= a, so the max picks a on the positive side
    return np.maximum(a, np.expm1(np.minimum(a, 0.0)))


# elu'(a) = min(elu(a) + 1, 1): the min picks exp(a) below zero and 1 above,
# and differentiating the min again yields the correct higher derivatives
_register("elu", _elu_fwd, lambda g, out, need, a: (mul(g, min2(add(out, 1.0), 1.0)),))
_register("sin", np.sin, lambda g, out, need, a: (mul(g, cos(a)),))
_register("cos", np.cos, lambda g, out, need, a: (neg(mul(g, sin(a))),))
_register("tan", np.tan, lambda g, out, need, a: (mul(g, add(square(out), 1.0)),))
_register("arctan", np.arctan, lambda g, out, need, a: (div(g, add(square(a), 1.0)),))


def _min2_vjp(g, out, need, a, b):
    av, bv = value_of(a), value_of(b)
    return ((_unbroadcast(mul(g, (av < bv).astype(np.float64)), _shape(a)) if need[0] else None),
            (_unbroadcast(mul(g, (bv < av).astype(np.float64)), _shape(b)) if need[1] else None))


def _max2_vjp(g, out, need, a, b):
    av, bv = value_of(a), value_of(b)
    return ((_unbroadcast(mul(g, (av > bv).astype(np.float64)), _shape(a)) if need[0] else None),
            (_unbroadcast(mul(g, (bv > av).astype(np.float64)), _shape(b)) if need[1] else None))


def _min2_fwd(a, b):
    _binary_shape(a, b)
    return np.minimum(a, b)


def _max2_fwd(a, b):
    _binary_shape(a, b)
    return np.maximum(a, b)


_register("min2", _min2_fwd, _min2_vjp)
_register("max2", _max2_fwd, _max2_vjp)

# ---------------------------------------------------------------- linear algebra


def _matvec_fwd(w, x):
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"matvec of {w.shape} with {x.shape}")
    return x @ w.T


_register("matvec", _matvec_fwd,
          lambda g, out, need, w, x: ((outer(g, x) if need[0] else None),
                                      (matvec(transpose(w), g) if need[1] else None)))


def _outer_fwd(a, b):
    if a.ndim == 1 and b.ndim == 1:
        return np.outer(a, b)
    if a.ndim == 2 and b.ndim == 2 and a.shape[0] == b.shape[0]:
        return a.T @ b
    raise ShapeError(f"outer of {a.shape} with {b.shape}")


_register("outer", _outer_fwd,
          lambda g, out, need, a, b: ((matvec(g, b) if need[0] else None),
                                      (matvec(transpose(g), a) if need[1] else None)))
_register("transpose", lambda a: a.T.copy(), lambda g, out, need, a: (transpose(g),))


def _dot_fwd(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"dot of {a.shape} with {b.shape}")
    return np.sum(a * b, axis=-1)


def _dot_vjp(g, out, need, a, b):
    ge = reshape(g, _shape(g) + (1,))
    return (mul(ge, b) if need[0] else None), (mul(ge, a) if need[1] else None)


_register("dot", _dot_fwd, _dot_vjp)

# ---------------------------------------------------------------- shape plumbing


def _sum_vjp(g, out, need, a, axis=None):
    shape = _shape(a)
    if axis is None:
        kept = (1,) * len(shape)
    else:
        kept = list(shape)
        kept[axis] = 1
        kept = tuple(kept)
    return (broadcast_to(reshape(g, kept), shape),)


def _sum_to_fwd(a, shape):
    shape = tuple(shape)
    lead = a.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"cannot sum {a.shape} down to {shape}")
    out = a.sum(axis=tuple(range(lead))) if lead else a
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and out.shape[i] != 1)
    if axes:
        out = out.sum(axis=axes, keepdims=True)
    if out.shape != shape:
        raise ShapeError(f"cannot sum {a.shape} down to {shape}")
    return out


def _broadcast_fwd(a, shape):
    try:
        return np.broadcast_to(a, tuple(shape)).copy()
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _reshape_fwd(a, shape):
    try:
        return a.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _index_vjp(g, out, need, a, key):
    return (scatter(g, key, _shape(a)),)


def _scatter_fwd(a, key, shape):
    out = np.zeros(shape)
    out[key] = a
    return out


def _stack_fwd(*arrays, axis=-1):
    try:
        return np.stack(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _stack_vjp(g, out, need, *arrays, axis=-1):
    ndim = len(_shape(out))
    ax = axis % ndim
    return tuple(index(g, (slice(None),) * ax + (i,)) for i in range(len(arrays)))


_register("sum", lambda a, axis=None: np.sum(a, axis=axis), _sum_vjp)
_register("sum_to", _sum_to_fwd, lambda g, out, need, a, shape: (broadcast_to(g, _shape(a)),))
_register("broadcast_to", _broadcast_fwd, lambda g, out, need, a, shape: (sum_to(g, _shape(a)),))
_register("reshape", _reshape_fwd, lambda g, out, need, a, shape: (reshape(g, _shape(a)),))
_register("index", lambda a, key: np.array(a[key]), _index_vjp)
_register("scatter", _scatter_fwd, lambda g, out, need, a, key, shape: (index(g, key),))
_register("stack", _stack_fwd, _stack_vjp)


# ---------------------------------------------------------------- public op functions

def add(a, b): return apply("add", a, b)
def sub(a, b): return apply("sub", a, b)
def mul(a, b): return apply("mul", a, b)
def div(a, b): return apply("div", a, b)
def neg(a): return apply("neg", a)
def scale(a, c: float): return apply("scale", a, c=float(c))
def square(a): return apply("square", a)
def sqrt(a): return apply("sqrt", a)
def abs_(a): return apply("abs", a)
def sign(a): return apply("sign", a)
def exp(a): return apply("exp", a)
def log1p(a): return apply("log1p", a)
def tanh(a): return apply("tanh", a)
def sigmoid(a): return apply("sigmoid", a)
def softplus(a): return apply("softplus", a)
def elu(a): return apply("elu", a)
def sin(a): return apply("sin", a)
def cos(a): return apply("cos", a)
def tan(a): return apply("tan", a)
def arctan(a): return apply("arctan", a)
def min2(a, b): return apply("min2", a, b)
def max2(a, b): return apply("max2", a, b)
def matvec(w, x): return apply("matvec", w, x)
def outer(a, b): return apply("outer", a, b)
def transpose(a): return apply("transpose", a)
def dot(a, b): return apply("dot", a, b)
def sum_(a, axis=None): return apply("sum", a, axis=axis)
def sum_to(a, shape): return apply("sum_to", a, shape=tuple(shape))
def broadcast_to(a, shape): return apply("broadcast_to", a, shape=tuple(shape))
def reshape(a, shape): return apply("reshape", a, shape=tuple(shape))
def index(a, key): return apply("index", a, key=key)
def scatter(a, key, shape): return apply("scatter", a, key=key, shape=tuple(shape))
def stack(arrays: Sequence, axis: int = -1): return apply("stack", *arrays, axis=axis)


def mean(a, axis=None):
    n = value_of(a).size if axis is None else _shape(a)[axis]
    return scale(sum_(a, axis), 1.0 / n)


# ---------------------------------------------------------------- differentiation

def grad(output: Var, wrt: Sequence[Var], create_graph: bool = False) -> list[Any]:
    """Gradients of a scalar ``output`` with respect to each of ``wrt``.

    Returns ndarrays, or ``Var`` objects recorded on the same tape when
    ``create_graph`` is set (so they can be differentiated again).
    """
    if not isinstance(output, Var):
        raise TypeError("output is not traced")
    if output.value.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {output.shape}")
    tape = output.tape
    for w in wrt:
        if not isinstance(w, Var) or w.tape is not tape:
            raise ValueError("wrt variables must live on the output's tape")
    nodes = tape.nodes
    top = output.index

    # only nodes downstream of some wrt variable carry useful adjoints
    live = np.zeros(top + 1, dtype=bool)
    for w in wrt:
        if w.index <= top:
            live[w.index] = True
    for i in range(min(w.index for w in wrt) if wrt else top + 1, top + 1):
        if not live[i]:
            live[i] = any(isinstance(a, int) and live[a] for a in nodes[i].args)

    keep = {w.index for w in wrt}
    adj: dict[int, Any] = {top: np.ones_like(output.value)}
    for i in range(top, -1, -1):
        node = nodes[i]
        g = adj.get(i) if i in keep else adj.pop(i, None)
        if g is None or node.kind == "leaf" or not live[i]:
            continue
        if create_graph:
            ins = [Var(tape, a) if isinstance(a, int) else a for a in node.args]
            out = Var(tape, i)
        else:
            ins = [nodes[a].value if isinstance(a, int) else a for a in node.args]
            out = node.value
        need = tuple(isinstance(a, int) and bool(live[a]) for a in node.args)
        grads = OPS[node.kind].vjp(g, out, need, *ins, **node.attrs)
        for a, ga in zip(node.args, grads):
            if ga is None or not isinstance(a, int) or not live[a]:
                continue
            adj[a] = add(adj[a], ga) if a in adj else ga

    result = []
    for w in wrt:
        g = adj.get(w.index)
        result.append(np.zeros_like(w.value) if g is None else g)
    return result
