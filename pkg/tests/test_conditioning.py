import mpmath as mp
import numpy as np
import pytest

from flossrnn import conditioning, lyapunov, models
from flossrnn.conditioning import ExtPrecMatrix
from flossrnn.models import ArchitectureSpec


def _linear_params(w, seed=0):
    n = w.shape[0]
    spec = ArchitectureSpec("linear", n)
    p = models.init_gaussian(spec, 0.5, seed)
    p.tensors["W"] = np.asarray(w, dtype=float)
    return spec, p


def test_extprec_rejects_low_precision():
    with pytest.raises(ValueError):
        ExtPrecMatrix.from_numpy(np.eye(2), prec_bits=128)


def test_condition_direct_identity_and_diag():
    t = ExtPrecMatrix.from_numpy(np.eye(4))
    q = np.eye(4)[:, :2]
    assert abs(conditioning.condition_direct(2, t, q)) < 1e-20

    t = ExtPrecMatrix.from_numpy(np.diag([4.0, 1.0]))
    q = np.eye(2)
    got = conditioning.condition_direct(2, t, q)
    assert abs(got - np.log(4.0)) < 1e-12


def test_condition_direct_checks_basis():
    t = ExtPrecMatrix.from_numpy(np.eye(3))
    with pytest.raises(ValueError):
        conditioning.condition_direct(2, t, np.ones((3, 2)))


def test_uniform_linear_product_exact():
    a = 0.5
    spec, p = _linear_params(a * np.eye(3))
    horizon = 12
    ext = conditioning.long_term_jacobian_ext(spec, p, tau=4, t=4 + horizon,
                                              seed=0)
    with mp.workprec(256):
        expect = mp.mpf(0.5) ** horizon
        for i in range(3):
            for j in range(3):
                v = ext.data[i][j]
                if i == j:
                    assert abs(v - expect) <= expect * mp.mpf(2) ** -200
                else:
                    assert v == 0


def test_horizon_one_equals_jacobian():
    spec = ArchitectureSpec("vanilla_tanh", 5)
    p = models.init_gaussian(spec, 0.9, 3)
    inputs = np.random.default_rng(99).standard_normal((4, 1))
    # with explicit inputs the function's rng draws the state first
    rng = conditioning._trajectory_rng(7)
    state = models.random_state(spec, rng)
    for s in range(3):
        state = models.step(spec, p, state, inputs[s])
    expect = models.jacobian(spec, p, state, inputs[3])
    ext = conditioning.long_term_jacobian_ext(spec, p, tau=3, t=4, seed=7,
                                              inputs=inputs)
    assert np.array_equal(ext.to_numpy(), expect)


def test_split_product_associativity():
    spec = ArchitectureSpec("vanilla_tanh", 6)
    p = models.init_gaussian(spec, 1.0, 11)
    rng = conditioning._trajectory_rng(13)
    inputs = rng.standard_normal((30, 1))
    full = conditioning.long_term_jacobian_ext(spec, p, tau=0, t=30, seed=13,
                                               inputs=inputs)
    first = conditioning.long_term_jacobian_ext(spec, p, tau=0, t=17, seed=13,
                                                inputs=inputs)
    second = conditioning.long_term_jacobian_ext(spec, p, tau=17, t=30, seed=13,
                                                 inputs=inputs)
    recombined = second.matmul(first)
    with mp.workprec(256):
        scale = full.max_abs()
        worst = max(abs(a - b) for ra, rb in zip(full.data, recombined.data)
                    for a, b in zip(ra, rb))
        assert worst / scale < mp.mpf(10) ** -50


def test_estimate_trivial_cases():
    lam = np.array([-0.1, -0.1, -0.1])
    assert conditioning.condition_estimate(lam, 3, 100) == 0.0
    lam = np.array([0.0, -0.1])
    assert abs(conditioning.condition_estimate(lam, 2, 100) - 10.0) < 1e-12


def test_estimate_exact_for_diagonal_linear():
    d = np.array([0.9, 0.7, 0.5, 0.3])
    spec, p = _linear_params(np.diag(d))
    # transient long enough for the basis to lock onto the axes
    est = lyapunov.lyapunov_spectrum(spec, p, k=4, t_sim=300, t_ons=1,
                                     t_transient=150, seed=1)
    assert np.abs(np.sort(est.exponents)[::-1] - np.log(d)).max() < 1e-8
    horizon = 40
    ext = conditioning.long_term_jacobian_ext(spec, p, tau=0, t=horizon, seed=1)
    # axis-aligned basis picks out the diagonal growth rates exactly
    q = np.eye(4)
    direct = conditioning.condition_direct(4, ext, q)
    estimate = conditioning.condition_estimate(np.log(d), 4, horizon)
    assert abs(direct - estimate) < 1e-8


def test_jacobi_vs_qr_accumulation_cross_check():
    # the two routes differ by basis-alignment offsets that are O(1) in the
    # horizon, so the window must be long enough for log-kappa to dominate
    spec = ArchitectureSpec("vanilla_tanh", 20)
    p = models.init_gaussian(spec, 1.0, 17)
    rng = conditioning._trajectory_rng(19)
    horizon = 400
    inputs = rng.standard_normal((10 + horizon, 1))
    reports = conditioning.condition_scan(spec, p, tau=10, horizons=[horizon],
                                          m=5, seed=19, inputs=inputs)
    direct_svd = reports[0].log_kappa_direct
    direct_qr = conditioning.condition_direct_qr(spec, p, tau=10,
                                                 horizon=horizon,
                                                 m=5, seed=19, inputs=inputs)
    assert abs(direct_svd - direct_qr) / abs(direct_svd) < 0.05


def test_precision_sufficiency_doubling():
    spec = ArchitectureSpec("vanilla_tanh", 8)
    p = models.init_gaussian(spec, 1.0, 23)
    rng = conditioning._trajectory_rng(29)
    inputs = rng.standard_normal((40, 1))
    vals = []
    for bits in (256, 512):
        ext = conditioning.long_term_jacobian_ext(spec, p, tau=0, t=40, seed=29,
                                                  inputs=inputs, prec_bits=bits)
        rng2 = np.random.default_rng(5)
        q = lyapunov.random_orthonormal(8, 3, rng2)
        vals.append(conditioning.condition_direct(3, ext, q))
    assert abs(vals[0] - vals[1]) < 1e-6


def test_condition_direct_underflow_guard():
    t = ExtPrecMatrix.from_numpy(np.diag([1.0, 1e-80]))
    with pytest.raises(conditioning.PrecisionError):
        conditioning.condition_direct(2, t, np.eye(2))


def test_usable_dimensions():
    lam = np.array([-0.1, -0.1, -0.1, -0.1])
    assert conditioning.usable_dimensions(lam, 100, 1.0) == 4
    lam = np.array([0.0, -0.05, -0.1, -0.2])
    assert conditioning.usable_dimensions(lam, 100, 1e-9) == 1
    assert conditioning.usable_dimensions(lam, 100, 6.0) == 2
    assert conditioning.usable_dimensions(lam, 100, 11.0) == 3
    with pytest.raises(ValueError):
        conditioning.usable_dimensions(lam, 100, 0.0)


def test_reports_csv(tmp_path):
    reports = [conditioning.ConditionReport(0, 100, 5, 12.0, 11.5)]
    path = tmp_path / "cond.csv"
    conditioning.reports_to_csv(path, reports)
    lines = path.read_text().splitlines()
    assert lines[0] == "seed,horizon,m,log_kappa_direct,log_kappa_estimate"
    assert lines[1].startswith("0,100,5,12,")
