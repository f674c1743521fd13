"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: every op returns a Var whose backward closure scatters the
upstream gradient into its parents. Recording only happens when gradients
are enabled (see no_grad) and some input requires them, so inference pays
almost nothing. Every op checks its output for NaN/Inf and raises
NumericError, which keeps the whole network hard-failing on bad numerics.

Gradient conventions that matter downstream:
  * max-style reductions route the gradient to the argmax element, ties
    broken to the lowest row index inside the group;
  * gather duplicates accumulate (np.add.at).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NumericError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Var:
    """A node in the computation graph wrapping one float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, _parents=(), _bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def param(data) -> Var:
    """A leaf that accumulates gradients."""
    return Var(np.array(data, dtype=np.float64), requires_grad=True)


def const(data) -> Var:
    return Var(data)


def _check_finite(a: np.ndarray) -> None:
    if not np.isfinite(a).all():
        raise NumericError("non-finite value produced")


def _make(data, parents, bwd) -> Var:
    _check_finite(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Var(data, requires_grad=True, _parents=parents, _bwd=bwd)
    return Var(data)


def backward(root: Var) -> None:
    """Run reverse accumulation from a scalar (or any) root, seeding with
    ones. Gradients land on every requires_grad leaf reachable from root."""
    order: list[Var] = []
    visiting: list[tuple[Var, bool]] = [(root, False)]
    seen: set[int] = set()
    while visiting:
        node, expanded = visiting.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        visiting.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                visiting.append((p, False))
    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# -- shape helpers -----------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and linear ops ----------------------------------------------


def add(a: Var, b: Var) -> Var:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a: Var, b: Var) -> Var:
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a: Var, b: Var) -> Var:
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def scale(a: Var, c: float) -> Var:
    out = a.data * c

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(out, (a,), bwd)


def matmul(a: Var, b: Var) -> Var:
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out, (a, b), bwd)


def linear(x: Var, w: Var, b: Var) -> Var:
    """x @ w + b for (n, din) inputs."""
    return add(matmul(x, w), b)


def head_linear(x: Var, w: Var, b: Var) -> Var:
    """Per-head linear map: (n, h, din) x (h, din, dout) -> (n, h, dout)."""
    out = np.einsum("nhi,hio->nho", x.data, w.data, optimize=True) + b.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.einsum("nho,hio->nhi", g, w.data, optimize=True))
        if w.requires_grad:
            w._accumulate(np.einsum("nhi,nho->hio", x.data, g, optimize=True))
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(out, (x, w, b), bwd)


def relu(x: Var) -> Var:
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return _make(out, (x,), bwd)


def reshape(x: Var, shape) -> Var:
    out = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _make(out, (x,), bwd)


def concat(parts: list[Var], axis: int = -1) -> Var:
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    return _make(out, tuple(parts), bwd)


def gather_rows(x: Var, idx: np.ndarray) -> Var:
    """x[idx] along axis 0; duplicate indices accumulate gradients."""
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x._accumulate(gx)

    return _make(out, (x,), bwd)


# -- reductions and normalizers ----------------------------------------------


def softmax(x: Var, axis: int = -1) -> Var:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            x._accumulate(s * (g - dot))

    return _make(s, (x,), bwd)


def log_softmax(x: Var, axis: int = -1) -> Var:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g):
        if x.requires_grad:
            soft = np.exp(out)
            x._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bwd)


def grouped_max(x: Var, groups: list[np.ndarray], empty_value: float = 0.0) -> Var:
    """Per-group columnwise max over rows of x: (rows, d) -> (len(groups), d).

    Empty groups yield a constant row of ``empty_value`` and receive no
    gradient. The argmax is taken in group order, so numpy's first-match
    rule breaks ties toward the lowest row index in the group.
    """
    d = x.data.shape[1]
    out = np.full((len(groups), d), empty_value, dtype=np.float64)
    args = []
    for n, rows in enumerate(groups):
        if len(rows) == 0:
            args.append(None)
            continue
        block = x.data[rows]
        a = block.argmax(axis=0)
        args.append(rows[a])
        out[n] = block[a, np.arange(d)]

    def bwd(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        cols = np.arange(d)
        for n, rows_arg in enumerate(args):
            if rows_arg is None:
                continue
            np.add.at(gx, (rows_arg, cols), g[n])
        x._accumulate(gx)

    return _make(out, (x,), bwd)


def take_label(x: Var, labels: np.ndarray) -> Var:
    """Pick x[i, labels[i]] -> (n,)."""
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, labels]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (rows, labels), g)
            x._accumulate(gx)

    return _make(out, (x,), bwd)


def mean(x: Var) -> Var:
    out = np.asarray(x.data.mean())
    n = x.data.size

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g) / n))

    return _make(out, (x,), bwd)


def sum_all(x: Var) -> Var:
    out = np.asarray(x.data.sum())

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g)))

    return _make(out, (x,), bwd)
