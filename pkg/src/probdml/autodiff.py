"""Minimal reverse-mode differentiation over numpy arrays.

Only the primitives needed by the losses are provided. Every function in this
module accepts plain arrays as well as :class:`Var`; when no argument is a
``Var`` the plain numpy result is returned, so the same metric code serves
both evaluation and gradient paths.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp as _np_logsumexp


class Var:
    """A node on the tape: a value plus the closures that pull gradients back."""

    __array_priority__ = 100.0
    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents  # tuple of (Var, vjp)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _node(val, *pairs):
    parents = tuple((p, f) for p, f in pairs if isinstance(p, Var))
    if not parents:
        return val
    return Var(val, parents)


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    return _node(
        out,
        (a, lambda g: _unbroadcast(g, np.shape(av))),
        (b, lambda g: _unbroadcast(g, np.shape(bv))),
    )


def neg(a):
    return _node(-value(a), (a, lambda g: -g))


def mul(a, b):
    av, bv = value(a), value(b)
    return _node(
        av * bv,
        (a, lambda g: _unbroadcast(g * bv, np.shape(av))),
        (b, lambda g: _unbroadcast(g * av, np.shape(bv))),
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _node(
        out,
        (a, lambda g: _unbroadcast(g / bv, np.shape(av))),
        (b, lambda g: _unbroadcast(-g * out / bv, np.shape(bv))),
    )


def power(a, p: float):
    av = value(a)
    return _node(av**p, (a, lambda g: g * p * av ** (p - 1)))


def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return _node(av @ bv, (a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))


def transpose(a):
    return _node(value(a).T, (a, lambda g: g.T))


def reshape(a, shape):
    av = value(a)
    return _node(av.reshape(shape), (a, lambda g: g.reshape(av.shape)))


def getitem(a, idx):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _node(av[idx], (a, vjp))


def sum_(a, axis=None, keepdims=False):
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, (a, vjp))


def exp(a):
    out = np.exp(value(a))
    return _node(out, (a, lambda g: g * out))


def log(a):
    av = value(a)
    return _node(np.log(av), (a, lambda g: g / av))


def log1p(a):
    av = value(a)
    return _node(np.log1p(av), (a, lambda g: g / (1.0 + av)))


def expm1(a):
    av = value(a)
    return _node(np.expm1(av), (a, lambda g: g * np.exp(av)))


def sqrt(a):
    out = np.sqrt(value(a))
    return _node(out, (a, lambda g: 0.5 * g / out))


def clip(a, lo, hi):
    """Clamp; the gradient passes only where the input is inside the bounds."""
    av = value(a)
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a, lambda g: g * inside))


def logsumexp(a, axis=None, keepdims=False):
    av = value(a)
    out = _np_logsumexp(av, axis=axis, keepdims=True)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * av.ndim)
        return g * np.exp(av - out)

    res = out if keepdims else (np.squeeze(out, axis=axis) if axis is not None else out.reshape(()))
    return _node(res, (a, vjp))


def softmax_nll(logits, targets):
    """Per-row ``-log softmax(logits)[target]`` for (B, C) logits.

    Evaluated relative to the target logit, ``log(1 + sum_{c != t} exp(l_c - l_t))``,
    and the target's gradient is formed as ``-sum_{c != t} p_c`` rather than
    ``p_t - 1``, so a confidently correct row keeps full relative precision.
    """
    lv = np.asarray(value(logits), dtype=np.float64)
    rows = np.arange(lv.shape[0])
    targets = np.asarray(targets)
    r = lv - lv[rows, targets][:, None]
    r[rows, targets] = -np.inf
    top = np.maximum(np.max(r, axis=1), 0.0)
    e = np.exp(r - top[:, None])
    tail = np.sum(e, axis=1)
    base = np.exp(-top)
    out = np.where(top > 0, top + np.log(base + tail), np.log1p(tail))

    def vjp(g):
        p = e / (base + tail)[:, None]
        p[rows, targets] = -np.sum(p, axis=1)
        return g[:, None] * p

    return _node(out, (logits, vjp))


def norm(a, axis=-1, keepdims=False):
    return sqrt(sum_(a * a, axis=axis, keepdims=keepdims))


def stack_last(parts):
    """Stack along a new trailing axis."""
    vals = [np.asarray(value(p), dtype=np.float64) for p in parts]
    shape = np.broadcast_shapes(*(v.shape for v in vals))
    out = np.stack([np.broadcast_to(v, shape) for v in vals], axis=-1)
    pairs = [(p, (lambda g, i=i, s=v.shape: _unbroadcast(g[..., i], s))) for i, (p, v) in enumerate(zip(parts, vals))]
    return _node(out, *pairs)


def concat_last(parts):
    """Concatenate along the trailing axis (operands broadcast on leading axes)."""
    vals = [np.asarray(value(p), dtype=np.float64) for p in parts]
    lead = np.broadcast_shapes(*(v.shape[:-1] for v in vals))
    full = [np.broadcast_to(v, lead + v.shape[-1:]) for v in vals]
    out = np.concatenate(full, axis=-1)
    offsets = np.cumsum([0] + [v.shape[-1] for v in vals])
    pairs = [
        (p, (lambda g, lo=offsets[i], hi=offsets[i + 1], s=v.shape: _unbroadcast(g[..., lo:hi], s)))
        for i, (p, v) in enumerate(zip(parts, vals))
    ]
    return _node(out, *pairs)


def log_c(kappa, normalizer):
    """``log C_M(kappa)`` for the given normalizer backend."""
    kv = value(kappa)
    out = np.asarray(normalizer.log_c(kv), dtype=np.float64)
    return _node(out, (kappa, lambda g: g * normalizer.dlog_c(kv)))


def dlog_c(kappa, normalizer):
    """Derivative of ``log C_M`` in kappa (equals ``-A_M(kappa)`` for the exact backend)."""
    kv = value(kappa)
    out = np.asarray(normalizer.dlog_c(kv), dtype=np.float64)
    return _node(out, (kappa, lambda g: g * normalizer.d2log_c(kv)))


def stop_gradient(a):
    return value(a)


def backward(out: Var, seed=None) -> None:
    """Accumulate ``d out / d node`` into ``.grad`` of every upstream node."""
    if not isinstance(out, Var):
        return
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node._parents:
            g = vjp(node.grad)
            parent.grad = g if parent.grad is None else parent.grad + g


def grad(fn, *args):
    """Value of scalar ``fn(*args)`` and its gradients with respect to each array argument."""
    vars_ = [Var(np.array(a, dtype=np.float64)) for a in args]
    out = fn(*vars_)
    if not isinstance(out, Var):
        return float(out), [np.zeros(np.shape(a)) for a in args]
    if out.value.size != 1:
        raise ValueError("grad() needs a scalar output")
    backward(out)
    grads = [v.grad if v.grad is not None else np.zeros(v.shape) for v in vars_]
    return float(out.value), grads


def numerical_grad(fn, *args, eps: float = 1e-5):
    """Central finite differences of scalar ``fn`` for every element of every argument."""
    args = [np.array(a, dtype=np.float64) for a in args]
    grads = []
    for i, a in enumerate(args):
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + eps
            fp = float(value(fn(*args)))
            a[idx] = orig - eps
            fm = float(value(fn(*args)))
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def grad_rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)`` over a list of arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a), np.asarray(n)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst
