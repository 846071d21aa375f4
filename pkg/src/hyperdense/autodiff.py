"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs are tracked tensors
(a Wengert list).  :meth:`Tape.gradient` replays that list backwards,
accumulating adjoints with hand-written vector-Jacobian products.

The elementwise helpers at the bottom of this module (``sqrt``, ``acosh``,
``concat`` ...) dispatch on their argument type, so model code written
against them runs unchanged on plain ``numpy`` arrays (no recording) or on
:class:`Tensor` values (recorded when a tape is active).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []

# floor for sqrt(x^2 - 1) in the acosh adjoint; keeps 0 * inf out of chains
_ACOSH_FLOOR = 1e-30


class Tensor:
    """A float64 array that can participate in a recorded computation."""

    __slots__ = ("value", "tracked", "parents", "vjp")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, tracked: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tracked = tracked
        self.parents: tuple = ()
        self.vjp: Callable | None = None

    # -- array-like surface --------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Tensor({self.value!r}, tracked={self.tracked})"

    def numpy(self) -> np.ndarray:
        return self.value

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod(
            [self.value.shape[a] for a in np.atleast_1d(axis)])
        return reduce_sum(self, axis, keepdims) / float(n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


class Tape:
    """Records tracked operations so their adjoints can be replayed.

    Usage::

        with Tape() as tape:
            w = tape.watch(np.ones(3))
            loss = (w * w).sum()
        (grad,) = tape.gradient(loss, [w])
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def watch(self, value) -> Tensor:
        return Tensor(value.value if isinstance(value, Tensor) else value, tracked=True)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        if not isinstance(target, Tensor) or target.value.size != 1:
            raise ValueError("gradient target must be a scalar Tensor")
        adj: dict[int, np.ndarray] = {id(target): np.ones_like(target.value)}
        for node in reversed(self.nodes):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            grads = node.vjp(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not isinstance(parent, Tensor) or not parent.tracked:
                    continue
                key = id(parent)
                if key in adj:
                    adj[key] = adj[key] + pg
                else:
                    adj[key] = pg
        out = []
        for s in sources:
            g = adj.get(id(s))
            out.append(np.zeros_like(s.value) if g is None else np.asarray(g))
        return out


def _record(value, parents: tuple, vjp: Callable) -> Tensor:
    tracked = any(isinstance(p, Tensor) and p.tracked for p in parents)
    out = Tensor(value, tracked=tracked)
    if tracked and _ACTIVE:
        out.parents = parents
        out.vjp = vjp
        _ACTIVE[-1].nodes.append(out)
    return out


def _val(x):
    return x.value if isinstance(x, Tensor) else x


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape(x):
    return np.shape(_val(x))


# -- primitive operations ------------------------------------------------

def add(a, b):
    sa, sb = _shape(a), _shape(b)
    return _record(_val(a) + _val(b), (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    if not isinstance(a, Tensor):
        return -a
    return _record(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    va, vb = _val(a), _val(b)
    return _record(va * vb, (a, b),
                   lambda g: (_unbroadcast(g * vb, np.shape(va)),
                              _unbroadcast(g * va, np.shape(vb))))


def div(a, b):
    va, vb = _val(a), _val(b)
    out = va / vb
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / vb, np.shape(va)),
                              _unbroadcast(-g * out / vb, np.shape(vb))))


def power(a, exponent: float):
    if isinstance(exponent, Tensor):
        raise TypeError("only constant exponents are supported")
    va = _val(a)
    out = va ** exponent
    return _record(out, (a,), lambda g: (g * exponent * va ** (exponent - 1),))


def matmul(a, b):
    va, vb = _val(a), _val(b)
    if va.ndim < 2 or vb.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(vb, -1, -2), va.shape)
        gb = _unbroadcast(np.swapaxes(va, -1, -2) @ g, vb.shape)
        return ga, gb

    return _record(va @ vb, (a, b), vjp)


def reduce_sum(a, axis=None, keepdims=False):
    va = _val(a)
    out = va.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, va.shape).copy(),)

    return _record(out, (a,), vjp)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, slice, np.integer))
               for i in items)


def getitem(a, idx):
    va = _val(a)
    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros_like(va)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(va[idx], (a,), vjp)


def reshape(a, shape):
    va = _val(a)
    return _record(va.reshape(shape), (a,), lambda g: (g.reshape(va.shape),))


def swapaxes(a, i, j):
    return _record(np.swapaxes(_val(a), i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _concat(xs, axis):
    vals = [np.asarray(_val(x), dtype=np.float64) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(np.concatenate(vals, axis=axis), tuple(xs), vjp)


def _where(cond, a, b):
    va, vb = _val(a), _val(b)
    return _record(np.where(cond, va, vb), (a, b),
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), np.shape(va)),
                              _unbroadcast(np.where(cond, 0.0, g), np.shape(vb))))


def _unary(fn, dfn):
    def op(a):
        va = a.value
        out = fn(va)
        return _record(out, (a,), lambda g: (g * dfn(va, out),))
    return op


_t_sqrt = _unary(np.sqrt, lambda x, y: 0.5 / y)
_t_exp = _unary(np.exp, lambda x, y: y)
_t_log = _unary(np.log, lambda x, y: 1.0 / x)
_t_abs = _unary(np.abs, lambda x, y: np.sign(x))  # subgradient 0 at the kink
_t_relu = _unary(lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))
_t_cosh = _unary(np.cosh, lambda x, y: np.sinh(x))
_t_sinh = _unary(np.sinh, lambda x, y: np.cosh(x))
_t_acosh = _unary(np.arccosh,
                  lambda x, y: 1.0 / np.sqrt(np.maximum(x * x - 1.0, _ACOSH_FLOOR)))


# -- type-dispatching helpers used by model code --------------------------

def _dispatch(tensor_op, numpy_op):
    def f(x):
        if isinstance(x, Tensor):
            return tensor_op(x)
        return numpy_op(x)
    f.__name__ = numpy_op.__name__
    return f


sqrt = _dispatch(_t_sqrt, np.sqrt)
exp = _dispatch(_t_exp, np.exp)
log = _dispatch(_t_log, np.log)
abs_ = _dispatch(_t_abs, np.abs)
relu = _dispatch(_t_relu, lambda x: np.maximum(x, 0.0))
cosh = _dispatch(_t_cosh, np.cosh)
sinh = _dispatch(_t_sinh, np.sinh)
acosh = _dispatch(_t_acosh, np.arccosh)


def concat(xs: Iterable, axis: int = -1):
    xs = list(xs)
    if any(isinstance(x, Tensor) for x in xs):
        return _concat(xs, axis)
    return np.concatenate(xs, axis=axis)


def where(cond, a, b):
    """Select with a constant boolean condition."""
    cond = np.asarray(cond, dtype=bool)
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return _where(cond, a, b)
    return np.where(cond, a, b)


def clamp_min(x, lo: float):
    """max(x, lo); the adjoint passes through only where x >= lo."""
    if isinstance(x, Tensor):
        keep = x.value >= lo
        return _where(keep, x, np.full(x.shape, lo))
    return np.maximum(x, lo)


def stop_gradient(x):
    return x.value if isinstance(x, Tensor) else x


def logsumexp(x, axis: int = -1, keepdims: bool = False):
    """Stable log-sum-exp; rows that are entirely -inf return -inf."""
    m = np.max(stop_gradient(x), axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = exp(x - m).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):  # all -inf rows give log(0) = -inf
        out = log(s) + m
    if not keepdims:
        out = out.sum(axis=axis) if isinstance(out, Tensor) else np.squeeze(out, axis=axis)
    return out


def softmax(x, axis: int = -1):
    m = np.max(stop_gradient(x), axis=axis, keepdims=True)
    e = exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def value(x) -> np.ndarray:
    """Plain numpy value of a Tensor or array."""
    return np.asarray(_val(x))
