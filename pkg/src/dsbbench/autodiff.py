"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The primitive set is exactly what the CP-field losses, the u-table recursion
and the transition MLP need: add/mul (with broadcasting), matmul, exp, log,
relu, logsumexp, log-softmax, sum, reshape, gather, concat and stack.
Gradients accumulate into ``.grad`` of leaves created with
``requires_grad=True``; a leaf that is not on any path to the loss gets an
exact zero gradient.
"""

from __future__ import annotations

import numpy as np

# Every op output is checked for NaN/+inf: either means a diverged model and
# must surface. -inf is a legitimate log-domain zero (underflowed kernel
# entries) and is allowed to flow through logsumexp reductions.
FINITE_CHECKS = True


class NonFiniteError(FloatingPointError):
    """An op produced NaN or +inf."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check(value: np.ndarray, op: str) -> np.ndarray:
    if FINITE_CHECKS:
        flat = value.ravel()
        if np.isnan(flat).any() or np.isposinf(flat).any():
            raise NonFiniteError(f"NaN or +inf produced by op '{op}'")
    return value


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """A node in the computation graph: float64 array plus backward hooks."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _vjp=None):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or ("leaf" if not self._parents else "node")
        return f"Var({tag}, shape={self.value.shape})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Var) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not a supported primitive")
        return mul(self, 1.0 / _as_array(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return mul(vsum(self, axis=axis), 1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _node(value, op, parents, vjp) -> Var:
    out = Var(_check(value, op), _parents=tuple(parents), _vjp=vjp)
    return out


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else _as_array(x)


# -- primitives ---------------------------------------------------------

def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = av + bv

    def vjp(g):
        return (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape))

    return _node(out, "add", (a, b), vjp)


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = av * bv

    def vjp(g):
        return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

    return _node(out, "mul", (a, b), vjp)


def matmul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = av @ bv

    def vjp(g):
        return (g @ bv.T, av.T @ g)

    return _node(out, "matmul", (a, b), vjp)


def exp(a) -> Var:
    av = _val(a)
    out = np.exp(av)

    def vjp(g):
        return (g * out,)

    return _node(out, "exp", (a,), vjp)


def log(a) -> Var:
    """Natural log; exact zeros map to -inf with zero gradient (the masked
    -inf contract: downstream weights must vanish there)."""
    av = _val(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)

    def vjp(g):
        return (np.divide(g, av, out=np.zeros_like(g + av), where=av > 0.0),)

    return _node(out, "log", (a,), vjp)


def relu(a) -> Var:
    av = _val(a)
    out = np.maximum(av, 0.0)

    def vjp(g):
        return (g * (av > 0.0),)

    return _node(out, "relu", (a,), vjp)


def vsum(a, axis=None, keepdims=False) -> Var:
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _node(out, "sum", (a,), vjp)


def logsumexp(a, axis=-1, keepdims=False) -> Var:
    av = _val(a)
    m = np.max(av, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(av - safe)
    total = shifted.sum(axis=axis, keepdims=True)
    out_k = np.where(np.isfinite(m), safe + np.log(total), m)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)
    soft = np.where(np.isfinite(m), shifted / total, 0.0)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _node(out, "logsumexp", (a,), vjp)


def log_softmax(a, axis=-1) -> Var:
    av = _val(a)
    m = np.max(av, axis=axis, keepdims=True)
    shifted = av - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out, "log_softmax", (a,), vjp)


def weighted(a, w) -> Var:
    """a * w with constant nonnegative weights, defining 0 * (-inf) = 0.

    Used for expectations of log-probabilities against a target that has
    zero mass exactly where the log is -inf.
    """
    av = _val(a)
    wv = _val(w)
    out = np.where(wv != 0.0, av, 0.0) * wv

    def vjp(g):
        return (g * wv, None)

    return _node(out, "weighted", (a, w), vjp)


def reshape(a, shape) -> Var:
    av = _val(a)
    out = av.reshape(shape)

    def vjp(g):
        return (g.reshape(av.shape),)

    return _node(out, "reshape", (a,), vjp)


def gather(a, indices: tuple) -> Var:
    """Advanced integer indexing a.value[indices]; indices broadcast together."""
    av = _val(a)
    idx = tuple(np.asarray(i) for i in indices)
    if len(idx) != av.ndim:
        raise ValueError(f"gather needs one index array per axis ({av.ndim}), got {len(idx)}")
    out = av[idx]
    bidx = np.broadcast_arrays(*idx)
    flat = np.ravel_multi_index(tuple(i.ravel() for i in bidx), av.shape)

    def vjp(g):
        ga = np.bincount(flat, weights=np.broadcast_to(g, bidx[0].shape).ravel(),
                         minlength=av.size)
        return (ga.reshape(av.shape),)

    return _node(out, "gather", (a,), vjp)


def concat(parts, axis=-1) -> Var:
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(vals)))

    return _node(out, "concat", tuple(parts), vjp)


def stack(parts, axis=0) -> Var:
    vals = [_val(p) for p in parts]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _node(out, "stack", tuple(parts), vjp)


# -- backward pass ------------------------------------------------------

def backward(loss: Var, params: list[Var] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every trainable leaf.

    `loss` must be scalar. If `params` is given, each listed leaf is
    guaranteed a .grad afterwards (zeros when not on any path to the loss).
    """
    if loss.value.ndim != 0:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")

    order: list[Var] = []
    seen: set[int] = set()
    stack_ = [loss]
    while stack_:
        node = stack_[-1]
        if id(node) in seen:
            stack_.pop()
            continue
        pending = [p for p in node._parents
                   if isinstance(p, Var) and id(p) not in seen and p._parents]
        unvisited = [p for p in node._parents
                     if isinstance(p, Var) and id(p) not in seen]
        if pending:
            stack_.extend(pending)
            continue
        for p in unvisited:
            seen.add(id(p))
            order.append(p)
        seen.add(id(node))
        order.append(node)
        stack_.pop()

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not isinstance(parent, Var) or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)


def zero_grads(params: list[Var]) -> None:
    for p in params:
        p.grad = None
