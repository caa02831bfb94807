"""A small reverse-mode tape over a fixed set of dense and edge-sparse ops.

Every tensor is float64. Scalars are ``(1, 1)`` tensors. An op appends a
record to the current thread's tape only when at least one input requires
a gradient; :func:`backward` walks the records in reverse, accumulates
into ``.grad`` of leaf tensors and clears the tape.

No general broadcasting: ``scale_rows``/``scale_cols``/``add_scalar`` are
the only shape-mixing ops.
"""
import contextlib
import threading

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError

EPS = 1e-10

__all__ = [
    "EPS", "Tensor", "Tape", "get_tape", "no_grad", "backward",
    "matmul", "add", "sub", "mul", "div", "scale", "add_scalar",
    "scale_rows", "scale_cols", "concat", "mean_over_set", "sigmoid",
    "prelu", "exp", "log", "log_sigmoid", "rowdot", "sq_norm", "total",
    "gather_rows", "scatter_rows", "spmm", "relation_project", "transpose",
    "logsumexp_rows", "l2_normalize_rows",
]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self):
        self.records = []
        self.enabled = True

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()

    def record(self, out, inputs, backward_fn, op):
        self.records.append((out, inputs, backward_fn, op))


_local = threading.local()


def get_tape():
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad():
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def _result(value, inputs, backward_fn, op):
    out = Tensor(value)
    tape = get_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, inputs, backward_fn, op)
    return out


def backward(loss, tape=None):
    """Populate ``.grad`` on every learnable leaf reachable from ``loss``.

    Returns the list of op names in the order they were visited.
    """
    tape = tape or get_tape()
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.records:
        raise ContractError("backward called on an empty tape")
    grads = {id(loss): np.ones_like(loss.value)}
    visited = []
    for out, inputs, fn, op in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        visited.append(op)
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    tape.clear()
    return visited


def _check(cond, op, msg):
    if not cond:
        raise DimensionError(f"{op}: {msg}")


def _same_shape(a, b, op):
    _check(a.shape == b.shape, op, f"shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------- dense ops

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check(a.value.ndim == 2 and b.value.ndim == 2, "matmul", "operands must be 2-D")
    _check(a.shape[1] == b.shape[0], "matmul", f"inner dims {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _result(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def div(a, b):
    """Elementwise ``a / b``; callers guarantee ``b`` is bounded away from 0."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div")
    av, bv = a.value, b.value
    out = av / bv
    return _result(out, (a, b), lambda g: (g / bv, -g * out / bv), "div")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.value * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a, s):
    """``a + s`` where ``s`` is a learnable (1, 1) bias."""
    a, s = as_tensor(a), as_tensor(s)
    _check(s.value.size == 1, "add_scalar", f"bias must have one element, got {s.shape}")
    sv = s.value.reshape(-1)[0]
    return _result(a.value + sv, (a, s),
                   lambda g: (g, np.full(s.shape, g.sum())), "add_scalar")


def scale_rows(x, w):
    """Multiply row ``n`` of ``x`` by ``w[n, 0]``."""
    x, w = as_tensor(x), as_tensor(w)
    _check(w.shape == (x.shape[0], 1), "scale_rows", f"weights {w.shape} vs rows of {x.shape}")
    xv, wv = x.value, w.value
    return _result(xv * wv, (x, w),
                   lambda g: (g * wv, (g * xv).sum(axis=1, keepdims=True)), "scale_rows")


def scale_cols(x, v):
    """Multiply column ``j`` of ``x`` by ``v[0, j]`` (a diagonal matrix product)."""
    x, v = as_tensor(x), as_tensor(v)
    _check(v.shape == (1, x.shape[1]), "scale_cols", f"diag {v.shape} vs cols of {x.shape}")
    xv, vv = x.value, v.value
    return _result(xv * vv, (x, v),
                   lambda g: (g * vv, (g * xv).sum(axis=0, keepdims=True)), "scale_cols")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    _check(len(tensors) > 0, "concat", "nothing to concatenate")
    other = 1 - axis
    _check(all(t.shape[other] == tensors[0].shape[other] for t in tensors), "concat",
           f"incompatible shapes {[t.shape for t in tensors]}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    return _result(value, tuple(tensors),
                   lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def mean_over_set(tensors):
    tensors = [as_tensor(t) for t in tensors]
    _check(len(tensors) > 0, "mean_over_set", "empty set")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "mean_over_set")
    n = len(tensors)
    value = sum(t.value for t in tensors) / n
    return _result(value, tuple(tensors), lambda g: tuple(g / n for _ in range(n)), "mean_over_set")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.value)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def prelu(x, slope):
    """``max(x, 0) + slope * min(x, 0)`` with a learnable (1, 1) slope."""
    x, slope = as_tensor(x), as_tensor(slope)
    _check(slope.value.size == 1, "prelu", "slope must be a single scalar")
    xv = x.value
    a = slope.value.reshape(-1)[0]
    neg = xv < 0
    out = np.where(neg, a * xv, xv)
    return _result(out, (x, slope),
                   lambda g: (np.where(neg, a * g, g),
                              np.full(slope.shape, (g * np.where(neg, xv, 0.0)).sum())),
                   "prelu")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.value)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    """``log(x + EPS)``; defined for ``x >= 0``."""
    x = as_tensor(x)
    xe = x.value + EPS
    return _result(np.log(xe), (x,), lambda g: (g / xe,), "log")


def log_sigmoid(x):
    """Numerically stable ``log(sigmoid(x))``."""
    x = as_tensor(x)
    xv = x.value
    out = np.minimum(xv, 0.0) - np.log1p(np.exp(-np.abs(xv)))
    return _result(out, (x,), lambda g: (g * _sigmoid(-xv),), "log_sigmoid")


def rowdot(a, b):
    """Row-wise inner product, ``(n, d), (n, d) -> (n, 1)``."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "rowdot")
    av, bv = a.value, b.value
    out = np.einsum("ij,ij->i", av, bv)[:, None]
    return _result(out, (a, b), lambda g: (g * bv, g * av), "rowdot")


def sq_norm(a):
    """Sum of squares as a (1, 1) tensor."""
    a = as_tensor(a)
    av = a.value
    return _result(np.array([[np.sum(av * av)]]), (a,),
                   lambda g: (2.0 * g.reshape(-1)[0] * av,), "sq_norm")


def total(a):
    """Sum of all entries as a (1, 1) tensor."""
    a = as_tensor(a)
    shape = a.shape
    return _result(np.array([[a.value.sum()]]), (a,),
                   lambda g: (np.full(shape, g.reshape(-1)[0]),), "total")


def transpose(a):
    a = as_tensor(a)
    _check(a.value.ndim == 2, "transpose", "operand must be 2-D")
    return _result(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def logsumexp_rows(a):
    """Max-shifted ``log(sum(exp(a), axis=1))`` as an ``(n, 1)`` column."""
    a = as_tensor(a)
    av = a.value
    m = av.max(axis=1, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    return _result(out, (a,), lambda g: (g * soft,), "logsumexp_rows")


def l2_normalize_rows(a):
    """Divide each row by ``max(||row||, EPS)``."""
    a = as_tensor(a)
    av = a.value
    norm = np.maximum(np.sqrt(np.einsum("ij,ij->i", av, av)), EPS)[:, None]
    y = av / norm
    clipped = norm <= EPS

    def fn(g):
        proj = g - y * np.einsum("ij,ij->i", y, g)[:, None]
        return (np.where(clipped, g, proj) / norm,)

    return _result(y, (a,), fn, "l2_normalize_rows")


# ----------------------------------------------------------- sparse/indexed

def gather_rows(table, index):
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    _check(index.size == 0 or (index.min() >= 0 and index.max() < n), "gather_rows",
           f"index out of range for {n} rows")
    return _result(table.value[index], (table,),
                   lambda g: (_kernels.scatter_rows(g, index, n),), "gather_rows")


def scatter_rows(values, index, n_out):
    """Sum rows of ``values`` into ``n_out`` buckets given by ``index``."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    _check(values.value.ndim == 2 and len(index) == values.shape[0], "scatter_rows",
           f"{len(index)} indices for values of shape {values.shape}")
    out = _kernels.scatter_rows(values.value, index, n_out)
    return _result(out, (values,), lambda g: (g[index],), "scatter_rows")


def spmm(x, src, dst, weight, n_out):
    """Edge-list sparse product: ``out[dst[e]] += weight[e] * x[src[e]]``.

    The graph (``src``, ``dst``, ``weight``) is constant; only ``x`` is
    differentiated.
    """
    x = as_tensor(x)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    _check(x.value.ndim == 2, "spmm", "operand must be 2-D")
    _check(len(src) == len(dst) == len(weight), "spmm", "edge arrays differ in length")
    n_in = x.shape[0]
    out = _kernels.spmm(x.value, src, dst, weight, n_out)
    return _result(out, (x,), lambda g: (_kernels.spmm(g, dst, src, weight, n_in),), "spmm")


def relation_project(mats, rel, x):
    """Per-row projection ``out[n] = mats[rel[n]] @ x[n]``.

    ``mats`` is an ``(R, d, d)`` stack of relation matrices.
    """
    mats, x = as_tensor(mats), as_tensor(x)
    rel = np.asarray(rel, dtype=np.int64)
    _check(mats.value.ndim == 3 and mats.shape[1] == mats.shape[2], "relation_project",
           f"expected (R, d, d) stack, got {mats.shape}")
    _check(x.value.ndim == 2 and x.shape[1] == mats.shape[2] and x.shape[0] == len(rel),
           "relation_project", f"rows {x.shape} vs relations {len(rel)} / {mats.shape}")
    mv, xv = mats.value, x.value
    sel = mv[rel]
    out = np.einsum("nij,nj->ni", sel, xv)

    def fn(g):
        gx = np.einsum("nij,ni->nj", sel, g)
        gm = np.zeros_like(mv)
        np.add.at(gm, rel, np.einsum("ni,nj->nij", g, xv))
        return gm, gx

    return _result(out, (mats, x), fn, "relation_project")
