"""Small reverse-mode autodiff over dense float64 arrays.

Every op evaluates eagerly and records a closure that maps the output
gradient to input gradients, so shape errors surface when the expression
is built.  The only broadcasting allowed is a ``1 x F`` bias added to an
``N x F`` matrix (:func:`add_bias`) and the explicit row scaling in
:func:`scale_rows`.

``relu`` has subgradient 0 at exactly 0.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for par in node._parents:
                stack.append((par, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for par, pg in zip(node._parents, node._backward(g)):
                if pg is None or not par.requires_grad:
                    continue
                key = id(par)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return Tensor(ad @ bd, parents=(a, b), op="matmul",
                  backward=lambda g: (g @ bd.T, ad.T @ g))


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor(a.data + b.data, parents=(a, b), op="add", backward=lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor(a.data - b.data, parents=(a, b), op="sub", backward=lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor(ad * bd, parents=(a, b), op="mul", backward=lambda g: (g * bd, g * ad))


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return Tensor(a.data * c, parents=(a,), op="scale", backward=lambda g: (g * c,))


def add_bias(x, b):
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"add_bias: {x.shape} + {b.shape}")
    return Tensor(x.data + b.data, parents=(x, b), op="add_bias",
                  backward=lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale_rows(x, w):
    """Multiply row ``i`` of ``x`` (``N x F``) by ``w[i]`` (``N x 1``)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.shape != (x.shape[0], 1):
        raise ShapeMismatch(f"scale_rows: {x.shape} by {w.shape}")
    xd, wd = x.data, w.data
    return Tensor(xd * wd, parents=(x, w), op="scale_rows",
                  backward=lambda g: (g * wd, (g * xd).sum(axis=1, keepdims=True)))


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), parents=(x,), op="relu",
                  backward=lambda g: (g * mask,))


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return Tensor(y, parents=(x,), op="tanh", backward=lambda g: (g * (1.0 - y * y),))


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    y = _sigmoid(x.data)
    return Tensor(y, parents=(x,), op="sigmoid", backward=lambda g: (g * y * (1.0 - y),))


def identity(x):
    return _as_tensor(x)


def log_sigmoid(x):
    """``x - log(1 + e^x)`` evaluated without overflow."""
    x = _as_tensor(x)
    v = x.data
    y = np.where(v <= 0, v - np.log1p(np.exp(np.minimum(v, 0))),
                 -np.log1p(np.exp(-np.maximum(v, 0))))
    s = _sigmoid(-v)
    return Tensor(y, parents=(x,), op="log_sigmoid", backward=lambda g: (g * s,))


def row_norm(x):
    """Euclidean norm of each row, as ``N x 1``; gradient 0 at a zero row."""
    x = _as_tensor(x)
    n = np.sqrt((x.data ** 2).sum(axis=1, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    xd = x.data
    return Tensor(n, parents=(x,), op="row_norm",
                  backward=lambda g: (np.where(n > 0, g / safe, 0.0) * xd,))


def row_dot(a, b):
    """Row-wise inner products ``a_i . b_i`` as ``N x 1``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "row_dot")
    ad, bd = a.data, b.data
    return Tensor((ad * bd).sum(axis=1, keepdims=True), parents=(a, b), op="row_dot",
                  backward=lambda g: (g * bd, g * ad))


def concat(parts, axis=1):
    parts = [_as_tensor(p) for p in parts]
    if any(p.data.ndim != 2 for p in parts):
        raise ShapeMismatch("concat expects matrices")
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise ShapeMismatch(f"concat: {[p.shape for p in parts]}")
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), parents=tuple(parts),
                  op="concat", backward=back)


def total(x):
    x = _as_tensor(x)
    shape = x.shape
    return Tensor(x.data.sum(), parents=(x,), op="sum",
                  backward=lambda g: (np.full(shape, float(g)),))


def mean(x):
    x = _as_tensor(x)
    shape, n = x.shape, x.data.size
    return Tensor(x.data.mean(), parents=(x,), op="mean",
                  backward=lambda g: (np.full(shape, float(g) / n),))


def gather_rows(x, idx):
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatch(f"gather_rows: index outside [0, {n})")

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(x.data[idx], parents=(x,), op="gather_rows", backward=back)


def edge_aggregate(src, dst, w, x, num_nodes, chunk=16384):
    """``out[d] = sum_{e: dst_e = d} w_e * x[src_e]``, i.e. a sparse ``(A * W) X``.

    ``w`` is an ``E x 1`` tensor of per-edge weights.  The sum runs in CSR
    order of ``(dst, src)`` so the result is deterministic.
    """
    w, x = _as_tensor(w), _as_tensor(x)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if w.shape != (len(src), 1) or len(dst) != len(src):
        raise ShapeMismatch(f"edge_aggregate: weights {w.shape} for {len(src)} edges")
    if x.data.ndim != 2 or x.shape[0] != num_nodes:
        raise ShapeMismatch(f"edge_aggregate: features {x.shape} for {num_nodes} nodes")
    mat = sp.csr_matrix((w.data[:, 0], (dst, src)), shape=(num_nodes, num_nodes))
    xd = x.data

    def back(g):
        gx = mat.T @ g if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.empty((len(src), 1))
            for s in range(0, len(src), chunk):
                e = slice(s, s + chunk)
                gw[e, 0] = np.einsum("ij,ij->i", g[dst[e]], xd[src[e]])
        return gw, gx

    return Tensor(mat @ xd, parents=(w, x), op="edge_aggregate", backward=back)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy on logits: ``max(x,0) - x y + log(1 + e^{-|x|})``."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeMismatch(f"bce_with_logits: {logits.shape} vs labels {y.shape}")
    x = logits.data
    n = x.size
    loss = (np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))).mean()
    return Tensor(loss, parents=(logits,), op="bce",
                  backward=lambda g: (float(g) * (_sigmoid(x) - y) / n,))


ACTIVATIONS = {
    "relu": (relu, 1.0),
    "tanh": (tanh, 1.0),
    "sigmoid": (sigmoid, 0.25),
    "identity": (identity, 1.0),
}


def activation(name):
    try:
        return ACTIVATIONS[name][0]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def lipschitz_of(name):
    return ACTIVATIONS[name][1]
