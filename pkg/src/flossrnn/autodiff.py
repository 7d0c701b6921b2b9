"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Var`` wraps an ndarray; operations record a graph of nodes in creation
order, which is a valid topological order for the backward sweep. The op set
is deliberately small: dense products, elementwise maps, diagonal scalings,
block assembly, and a QR node whose backward pass is the analytic pullback
from :mod:`flossrnn.linalg`. There is no broadcasting beyond the few shapes
the recurrent-network code needs.

Graphs are per-computation objects with no global state, so independent
computations are safe to run concurrently.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit

from . import linalg

_ORDER = itertools.count()


class Var:
    """Array value tracked for reverse-mode differentiation."""

    __slots__ = ("value", "grad", "node")

    def __init__(self, value, node=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


class _Node:
    __slots__ = ("inputs", "outputs", "backward", "order")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward
        self.order = next(_ORDER)


def _unary(value, x, backward):
    out = Var(value)
    out.node = _Node((x,), (out,), backward)
    return out


def _binary(value, x, y, backward):
    out = Var(value)
    out.node = _Node((x, y), (out,), backward)
    return out


def _accumulate(var: Var, g) -> None:
    if g is None:
        return
    if var.grad is None:
        var.grad = np.array(g, dtype=float, copy=True)
    else:
        var.grad += g


def backward(root: Var) -> None:
    """Accumulate gradients of scalar ``root`` into every ancestor Var."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    root.grad = np.ones_like(root.value)
    nodes = []
    seen = set()
    stack = [root.node] if root.node is not None else []
    while stack:
        node = stack.pop()
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        for v in node.inputs:
            if v.node is not None:
                stack.append(v.node)
    nodes.sort(key=lambda n: n.order, reverse=True)
    for node in nodes:
        if all(o.grad is None for o in node.outputs):
            continue
        out_grads = tuple(
            o.grad if o.grad is not None else np.zeros_like(o.value)
            for o in node.outputs
        )
        in_grads = node.backward(*out_grads)
        for v, g in zip(node.inputs, in_grads):
            _accumulate(v, g)


def grad_or_zeros(var: Var) -> np.ndarray:
    return var.grad if var.grad is not None else np.zeros_like(var.value)


# -- arithmetic ---------------------------------------------------------------

def _same_shape(x: Var, y: Var) -> None:
    if x.value.shape != y.value.shape:
        raise ValueError(f"shape mismatch: {x.value.shape} vs {y.value.shape}")


def add(x: Var, y: Var) -> Var:
    _same_shape(x, y)
    return _binary(x.value + y.value, x, y, lambda g: (g, g))


def sub(x: Var, y: Var) -> Var:
    _same_shape(x, y)
    return _binary(x.value - y.value, x, y, lambda g: (g, -g))


def mul(x: Var, y: Var) -> Var:
    _same_shape(x, y)
    xv, yv = x.value, y.value
    return _binary(xv * yv, x, y, lambda g: (g * yv, g * xv))


def scale(x: Var, c: float) -> Var:
    return _unary(x.value * c, x, lambda g: (g * c,))


def add_const(x: Var, c) -> Var:
    return _unary(x.value + c, x, lambda g: (g,))


def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value

    def back(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _binary(av @ bv, a, b, back)


def add_bias_scalar(m: Var, s: Var) -> Var:
    """m + s with scalar s broadcast across all entries."""
    return _binary(m.value + s.value, m, s, lambda g: (g, np.sum(g)))


def add_bias_col(m: Var, v: Var) -> Var:
    """(n, b) + (n,) column-broadcast bias."""
    return _binary(m.value + v.value[:, None], m, v, lambda g: (g, g.sum(axis=1)))


# -- elementwise maps ---------------------------------------------------------

def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return _unary(t, x, lambda g: (g * (1.0 - t * t),))


def sigmoid(x: Var) -> Var:
    s = expit(x.value)
    return _unary(s, x, lambda g: (g * s * (1.0 - s),))


def relu(x: Var) -> Var:
    xv = x.value
    return _unary(np.maximum(xv, 0.0), x, lambda g: (g * (xv > 0.0),))


def heaviside0(x: Var) -> Var:
    """Indicator of positivity; gradient is zero almost everywhere."""
    return _unary((x.value > 0.0).astype(float), x, lambda g: (None,))


def square(x: Var) -> Var:
    xv = x.value
    return _unary(xv * xv, x, lambda g: (2.0 * g * xv,))


def log(x: Var) -> Var:
    xv = x.value
    return _unary(np.log(xv), x, lambda g: (g / xv,))


def vsum(x: Var) -> Var:
    return _unary(np.asarray(np.sum(x.value)), x,
                  lambda g: (np.broadcast_to(g, x.value.shape).copy(),))


# -- structural ops -----------------------------------------------------------

def scale_rows(m: Var, v: Var) -> Var:
    """diag(v) @ m."""
    mv, vv = m.value, v.value
    return _binary(mv * vv[:, None], m, v,
                   lambda g: (g * vv[:, None], (g * mv).sum(axis=1)))


def scale_cols(m: Var, v: Var) -> Var:
    """m @ diag(v)."""
    mv, vv = m.value, v.value
    return _binary(mv * vv[None, :], m, v,
                   lambda g: (g * vv[None, :], (g * mv).sum(axis=0)))


def diag_matrix(v: Var) -> Var:
    return _unary(np.diag(v.value), v, lambda g: (np.diagonal(g).copy(),))


def diag_part(m: Var) -> Var:
    k = m.value.shape[0]

    def back(g):
        out = np.zeros_like(m.value)
        out[np.arange(k), np.arange(k)] = g
        return (out,)

    return _unary(np.diagonal(m.value).copy(), m, back)


def hstack2(a: Var, b: Var) -> Var:
    na = a.value.shape[1]
    return _binary(np.hstack((a.value, b.value)), a, b,
                   lambda g: (g[:, :na], g[:, na:]))


def vstack2(a: Var, b: Var) -> Var:
    na = a.value.shape[0]
    return _binary(np.vstack((a.value, b.value)), a, b,
                   lambda g: (g[:na], g[na:]))


def rows(x: Var, start: int, stop: int) -> Var:
    def back(g):
        out = np.zeros_like(x.value)
        out[start:stop] = g
        return (out,)

    return _unary(x.value[start:stop].copy(), x, back)


# -- composite/custom ops -----------------------------------------------------

def qr(a: Var) -> tuple[Var, Var]:
    """QR with positive diagonal; backward is the analytic pullback."""
    qv, rv = linalg.qr_positive(a.value)
    q = Var(qv)
    r = Var(rv)

    def back(gq, gr):
        return (linalg.qr_pullback(qv, rv, gq, gr),)

    node = _Node((a,), (q, r), back)
    q.node = node
    r.node = node
    return q, r


def bce_logits_sum(z: Var, y: np.ndarray) -> Var:
    """Sum of binary cross-entropies of logistic(z) against targets y."""
    zv = z.value
    val = np.sum(np.maximum(zv, 0.0) - zv * y + np.log1p(np.exp(-np.abs(zv))))
    return _unary(np.asarray(val), z, lambda g: (g * (expit(zv) - y),))
