"""Finite-difference checks for every op in the autodiff engine."""

import numpy as np
import pytest

from flossrnn import autodiff as ad


def _fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
        it.iternext()
    return g


def _check(build, shapes, seed=0, rtol=1e-6, eps=1e-6):
    """build(list of Vars) -> scalar Var; FD-check gradient of each input."""
    rng = np.random.default_rng(seed)
    values = [rng.standard_normal(s) for s in shapes]
    varz = [ad.Var(v) for v in values]
    out = build(varz)
    ad.backward(out)
    for i, v in enumerate(varz):
        def scalar(x, i=i):
            vals = [ad.Var(values[j]) if j != i else ad.Var(x)
                    for j in range(len(values))]
            return float(build(vals).value)
        fd = _fd_grad(scalar, values[i], eps)
        got = ad.grad_or_zeros(v)
        scale = max(np.abs(fd).max(), 1.0)
        assert np.abs(got - fd).max() / scale < rtol, f"input {i}"


def test_add_sub_mul():
    _check(lambda v: ad.vsum(ad.mul(ad.add(v[0], v[1]), ad.sub(v[0], v[2]))),
           [(3, 4), (3, 4), (3, 4)])


def test_matmul_matrix_and_vector():
    _check(lambda v: ad.vsum(ad.mul(ad.matmul(v[0], v[1]), ad.matmul(v[0], v[1]))),
           [(4, 3), (3, 5)])
    _check(lambda v: ad.vsum(ad.square(ad.matmul(v[0], v[1]))),
           [(4, 3), (3,)])


def test_elementwise_maps():
    _check(lambda v: ad.vsum(ad.tanh(v[0])), [(5,)])
    _check(lambda v: ad.vsum(ad.sigmoid(v[0])), [(5,)])
    _check(lambda v: ad.vsum(ad.square(v[0])), [(2, 3)])
    _check(lambda v: ad.vsum(ad.log(ad.add_const(ad.square(v[0]), 1.5))), [(4,)])


def test_relu_away_from_kink():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(8)
    x[np.abs(x) < 0.1] = 0.5
    v = ad.Var(x)
    out = ad.vsum(ad.square(ad.relu(v)))
    ad.backward(out)
    fd = _fd_grad(lambda y: float(np.sum(np.maximum(y, 0.0) ** 2)), x)
    assert np.allclose(v.grad, fd, atol=1e-6)


def test_heaviside_zero_grad():
    v = ad.Var(np.array([1.0, -2.0, 3.0]))
    out = ad.vsum(ad.mul(ad.heaviside0(v), v))
    ad.backward(out)
    assert np.allclose(v.grad, np.array([1.0, 0.0, 1.0]))


def test_bias_ops():
    _check(lambda v: ad.vsum(ad.square(ad.add_bias_col(v[0], v[1]))),
           [(4, 6), (4,)])

    def with_scalar(v):
        return ad.vsum(ad.square(ad.add_bias_scalar(v[0], v[1])))
    _check(with_scalar, [(3, 2), ()])


def test_structural_ops():
    _check(lambda v: ad.vsum(ad.square(ad.scale_rows(v[0], v[1]))),
           [(4, 3), (4,)])
    _check(lambda v: ad.vsum(ad.square(ad.scale_cols(v[0], v[1]))),
           [(4, 3), (3,)])
    _check(lambda v: ad.vsum(ad.square(ad.diag_matrix(v[0]))), [(4,)])
    _check(lambda v: ad.vsum(ad.square(ad.diag_part(ad.matmul(v[0], v[0])))),
           [(3, 3)])
    _check(lambda v: ad.vsum(ad.square(ad.hstack2(v[0], v[1]))),
           [(3, 2), (3, 4)])
    _check(lambda v: ad.vsum(ad.square(ad.vstack2(v[0], v[1]))),
           [(2, 3), (4, 3)])
    _check(lambda v: ad.vsum(ad.square(ad.rows(v[0], 1, 3))), [(5, 2)])


def test_qr_node_gradient():
    def build(v):
        q, r = ad.qr(v[0])
        return ad.add(ad.vsum(ad.square(q)),
                      ad.vsum(ad.square(ad.log(ad.diag_part(r)))))

    # shift to ensure well-conditioned full-rank input
    rng = np.random.default_rng(3)
    base = rng.standard_normal((6, 3)) + np.vstack([np.eye(3) * 3.0, np.zeros((3, 3))])
    values = [base]
    v = ad.Var(values[0])
    out = build([v])
    ad.backward(out)

    def scalar(x):
        return float(build([ad.Var(x)]).value)

    fd = _fd_grad(scalar, values[0])
    assert np.abs(v.grad - fd).max() / np.abs(fd).max() < 1e-6


def test_bce_logits():
    rng = np.random.default_rng(4)
    y = (rng.random((3, 4)) > 0.5).astype(float)

    def build(v):
        return ad.bce_logits_sum(v[0], y)

    _check(build, [(3, 4)], seed=5)
    # analytic value at zero logits is log(2) per element
    z = ad.Var(np.zeros((3, 4)))
    out = ad.bce_logits_sum(z, y)
    assert abs(float(out.value) - 12 * np.log(2.0)) < 1e-12


def test_fanout_accumulates():
    v = ad.Var(np.array([2.0, 3.0]))
    out = ad.vsum(ad.add(ad.mul(v, v), ad.mul(v, v)))
    ad.backward(out)
    assert np.allclose(v.grad, 4.0 * v.value)


def test_backward_requires_scalar():
    v = ad.Var(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.backward(ad.square(v))
