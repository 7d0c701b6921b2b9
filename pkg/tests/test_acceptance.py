"""Acceptance suite: one test per criterion, each printing a pass/fail line
with the measured values. Criteria 8 and 9 assert their fast smoke versions;
the full-scale runs are available behind FLOSSRNN_EXTENDED=1.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete.
"""

import os
import time

import numpy as np
import pytest

from flossrnn import (conditioning, experiments, flossing, linalg, lyapunov,
                      models)
from flossrnn.flossing import FlossingConfig
from flossrnn.models import ArchitectureSpec

EXTENDED = os.environ.get("FLOSSRNN_EXTENDED", "") == "1"


def _report(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {status}: {detail}")
    assert ok, f"criterion {num}: {detail}"


# -- 1: QR pullback vs finite differences --------------------------------------

def test_criterion_1_qr_pullback():
    rng = np.random.default_rng(1001)
    t0 = time.time()
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(3, 21))
        k = int(rng.integers(1, min(n, 10) + 1))
        a = rng.standard_normal((n, k))
        wq = rng.standard_normal((n, k))
        wr = np.triu(rng.standard_normal((k, k)))

        def loss(mat):
            q, r = linalg.qr_positive(mat)
            return float(np.sum(wq * q) + np.sum(wr * r))

        q, r = linalg.qr_positive(a)
        got = linalg.qr_pullback(q, r, wq, wr)
        fd = np.zeros_like(a)
        eps = 1e-6
        for i in range(n):
            for j in range(k):
                ap, am = a.copy(), a.copy()
                ap[i, j] += eps
                am[i, j] -= eps
                fd[i, j] = (loss(ap) - loss(am)) / (2 * eps)
        worst = max(worst, np.abs(got - fd).max() / max(np.abs(fd).max(), 1e-12))
    dt = time.time() - t0
    _report(1, worst < 1e-6 and dt < 10.0,
            f"50 matrices, worst relative error {worst:.2e}, {dt:.1f} s")


# -- 2: flossing gradient vs finite differences --------------------------------

def _floss_fd_worst(spec, params, cfg, seed, eps=1e-5):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    inputs = rng.standard_normal((cfg.t_floss, spec.input_dim))
    h0 = rng.standard_normal(spec.state_dim)
    if spec.kind == "vanilla_relu":
        h0[np.abs(h0) < 5e-2] += 0.3
    q0 = lyapunov.random_orthonormal(spec.state_dim, cfg.k, rng)
    _, _, grads = flossing.flossing_grad(spec, params, cfg, seed, h0=h0, q0=q0,
                                         inputs=inputs)
    worst = 0.0
    for name, g in grads.items():
        fd = np.zeros_like(g)
        it = np.nditer(np.atleast_1d(g), flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            vals = []
            for sgn in (+1, -1):
                p2 = params.copy()
                np.atleast_1d(p2.tensors[name])[idx] += sgn * eps
                loss, _ = flossing.flossing_forward(spec, p2, cfg, seed, h0=h0,
                                                    q0=q0, inputs=inputs)
                vals.append(loss)
            np.atleast_1d(fd)[idx] = (vals[0] - vals[1]) / (2 * eps)
            it.iternext()
        denom = max(np.abs(fd).max(), np.abs(g).max(), 1e-12)
        worst = max(worst, np.abs(g - fd).max() / denom)
    return worst


def test_criterion_2_flossing_gradient():
    t0 = time.time()
    cases = [
        ("vanilla_tanh", 8, 0.9, 13, FlossingConfig(k=3, t_floss=30, epochs=1)),
        ("vanilla_relu", 8, 1.2, 8, FlossingConfig(k=2, t_floss=12, epochs=1)),
        ("lstm", 4, 1.0, 23, FlossingConfig(k=2, t_floss=10, epochs=1, t_ons=2)),
    ]
    worst_all = {}
    for kind, n, gain, seed, cfg in cases:
        spec = ArchitectureSpec(kind, n)
        params = models.init_gaussian(spec, gain, seed)
        worst_all[kind] = _floss_fd_worst(spec, params, cfg, seed)
    dt = time.time() - t0
    ok = all(w < 1e-5 for w in worst_all.values()) and dt < 120.0
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst_all.items())
    _report(2, ok, f"worst relative errors {detail}, {dt:.1f} s")


# -- 5: exact exponent oracles --------------------------------------------------

def test_criterion_5_lyapunov_oracles():
    spec = ArchitectureSpec("linear", 12)
    p = models.init_gaussian(spec, 0.5, 0)
    p.tensors["W"] = models.init_orthogonal(
        ArchitectureSpec("vanilla_tanh", 12), 4)["W"]
    est = lyapunov.lyapunov_spectrum(spec, p, k=6, t_sim=500, t_ons=1,
                                     t_transient=50, seed=1)
    orth_dev = np.abs(est.exponents).max()

    p.tensors["W"] = 0.5 * np.eye(12)
    est = lyapunov.lyapunov_spectrum(spec, p, k=6, t_sim=400, t_ons=2,
                                     t_transient=20, seed=2)
    contr_dev = np.abs(est.exponents - np.log(0.5)).max()

    tanh_spec = ArchitectureSpec("vanilla_tanh", 32)
    tp = models.init_gaussian(tanh_spec, 1.0, 11)
    kw = dict(k=6, t_sim=2000, t_transient=300, seed=13)
    e1 = lyapunov.lyapunov_spectrum(tanh_spec, tp, t_ons=1, **kw)
    e5 = lyapunov.lyapunov_spectrum(tanh_spec, tp, t_ons=5, **kw)
    ons_dev = np.abs(e1.exponents - e5.exponents).max()

    ok = orth_dev < 1e-8 and contr_dev < 1e-10 and ons_dev < 0.005
    _report(5, ok, f"orthogonal dev {orth_dev:.1e}, contraction dev "
                   f"{contr_dev:.1e}, t_ons dev {ons_dev:.2e}")


# -- 3: first-exponent targeting ------------------------------------------------

def test_criterion_3_targets():
    t0 = time.time()
    opts = dict(experiments.FIG1_TARGETS_DEFAULTS)
    finals = {}
    for seed in range(10):
        rows = experiments.fig1_targets(opts, seed)["lambda_targets"]
        for (s, e, lam, target, loss) in rows:
            if e == opts["epochs"] - 1:
                finals.setdefault(target, []).append(lam)
    ok = True
    detail = []
    for target, lams in sorted(finals.items()):
        hits = sum(abs(l - target) < 0.1 for l in lams)
        detail.append(f"target {target}: {hits}/10")
        ok = ok and hits >= 8
    _report(3, ok, ", ".join(detail) + f", {time.time() - t0:.0f} s")


# -- 4: selective flossing of k = 16 of 32 --------------------------------------

def test_criterion_4_selective_spectrum():
    t0 = time.time()
    opts = dict(experiments.FIG1_SPECTRUM_DEFAULTS, k_list=(16,))
    spectra = {}
    for seed in range(10):
        rows = experiments.fig1_spectrum(opts, seed)["spectrum"]
        for (s, kf, i, lam) in rows:
            if kf == 16:
                spectra.setdefault(s, np.zeros(32))[i - 1] = lam
    mat = np.array([np.sort(spectra[s])[::-1] for s in sorted(spectra)])
    flossed, tail = mat[:, :16], mat[:, 16:]
    med_abs = float(np.median(np.abs(flossed), axis=0).max())
    spread_f = float(np.median(flossed.max(axis=0) - flossed.min(axis=0)))
    spread_t = float(np.median(tail.max(axis=0) - tail.min(axis=0)))
    ratio = spread_t / spread_f
    ok = med_abs < 0.05 and ratio > 5.0
    _report(4, ok, f"max median |flossed exponent| {med_abs:.3f}, "
                   f"tail/flossed spread ratio {ratio:.1f}, "
                   f"{time.time() - t0:.0f} s")


# -- 6: estimate vs extended-precision direct -----------------------------------

def test_criterion_6_condition_estimate():
    t0 = time.time()
    spec = ArchitectureSpec("vanilla_tanh", 40)
    rels = []
    for seed in range(5):
        params = models.init_gaussian(spec, 1.0, seed)
        reports = conditioning.condition_scan(spec, params, tau=500,
                                              horizons=[100, 200, 300, 400, 500],
                                              m=5, seed=seed, prec_bits=256)
        last = reports[-1]
        assert last.horizon == 500
        rels.append(abs(last.log_kappa_estimate - last.log_kappa_direct)
                    / abs(last.log_kappa_direct))
    med = float(np.median(rels))
    _report(6, med < 0.10, f"median relative error at horizon 500: {med:.3f} "
                           f"(per-seed {[round(r, 3) for r in rels]}), "
                           f"{time.time() - t0:.0f} s")


# -- 7: usable dimensions after flossing ----------------------------------------

def test_criterion_7_usable_dimensions():
    t0 = time.time()
    spec = ArchitectureSpec("vanilla_tanh", 40)
    budget = float(np.log(1e5))
    horizon = 300
    pairs = []
    for seed in range(5):
        base = models.init_gaussian(spec, 1.0, seed)
        cfg = FlossingConfig(k=15, t_floss=100, epochs=300)
        flossed, _ = flossing.floss(spec, base, cfg, seed)
        ms = {}
        for name, params in (("unflossed", base), ("flossed", flossed)):
            est = lyapunov.lyapunov_spectrum(spec, params, k=20, t_sim=2000,
                                             t_ons=5, t_transient=500,
                                             seed=seed + 1)
            lam = np.sort(est.exponents)[::-1]
            ms[name] = conditioning.usable_dimensions(lam, horizon, budget)
        pairs.append((ms["unflossed"], ms["flossed"]))
    med_un = float(np.median([p[0] for p in pairs]))
    med_fl = float(np.median([p[1] for p in pairs]))
    strict = sum(fl > un for un, fl in pairs)
    ok = med_fl >= med_un and strict >= 3
    _report(7, ok, f"median usable dims flossed {med_fl} vs unflossed {med_un}, "
                   f"strict increase {strict}/5, pairs {pairs}, "
                   f"{time.time() - t0:.0f} s")


# -- 8: preflossing on the delayed copy task ------------------------------------

def test_criterion_8_prefloss_copy_smoke():
    t0 = time.time()
    opts = dict(experiments.FIG3_PREFLOSS_DEFAULTS)  # d=20, 2000 epochs
    finals = {"prefloss": [], "none": []}
    for seed in range(3):
        rows = experiments.fig3_prefloss(opts, seed)["prefloss_copy"]
        for arm in finals:
            arm_rows = sorted((r[2], r[4]) for r in rows if r[1] == arm)
            finals[arm].append(arm_rows[-1][1])
    med_p = float(np.median(finals["prefloss"]))
    med_n = float(np.median(finals["none"]))
    _report(8, med_p < med_n,
            f"final test MSE median preflossed {med_p:.4f} vs unflossed "
            f"{med_n:.4f}, {time.time() - t0:.0f} s")


@pytest.mark.skipif(not EXTENDED, reason="extended suite (hours); set "
                                         "FLOSSRNN_EXTENDED=1")
def test_criterion_8_extended():
    opts = dict(experiments.FIG3_PREFLOSS_DEFAULTS, n_units=80, delay=40,
                seq_len=300, epochs=10000, k_floss=75, floss_epochs=500,
                t_floss=300)
    finals = {"prefloss": [], "none": []}
    for seed in range(5):
        rows = experiments.fig3_prefloss(opts, seed)["prefloss_copy"]
        for arm in finals:
            arm_rows = sorted((r[2], r[4]) for r in rows if r[1] == arm)
            finals[arm].append(arm_rows[-1][1])
    good = sum(v < 0.05 for v in finals["prefloss"])
    bad = sum(v > 0.1 for v in finals["none"])
    _report(8, good >= 3 and bad >= 3,
            f"extended: preflossed<0.05 {good}/5, unflossed>0.1 {bad}/5")


# -- 9: flossing during training on binary XOR ----------------------------------

def test_criterion_9_during_xor_smoke():
    t0 = time.time()
    opts = dict(experiments.FIG4_DURING_DEFAULTS)  # d=30, 3000 epochs
    final = {"during": [], "none": []}
    for seed in range(3):
        rows = experiments.fig4_during(opts, seed)["during_xor"]
        for arm in final:
            accs = sorted((r[2], r[5]) for r in rows
                          if r[1] == arm and r[5] != "")
            final[arm].append(accs[-1][1])
    sep = float(np.median(final["during"]) - np.median(final["none"]))
    _report(9, sep >= 0.2,
            f"median final accuracy during {np.median(final['during']):.3f} "
            f"vs none {np.median(final['none']):.3f} (gap {sep:.3f}), "
            f"{time.time() - t0:.0f} s")


@pytest.mark.skipif(not EXTENDED, reason="extended suite (hours); set "
                                         "FLOSSRNN_EXTENDED=1")
def test_criterion_9_extended():
    opts = dict(experiments.FIG4_DURING_DEFAULTS, n_units=80, delay=70,
                seq_len=300, epochs=10000, k_floss=75, floss_epochs=500,
                t_floss=300)
    final = {"during": [], "none": []}
    for seed in range(10):
        rows = experiments.fig4_during(opts, seed)["during_xor"]
        for arm in final:
            accs = sorted((r[2], r[5]) for r in rows
                          if r[1] == arm and r[5] != "")
            final[arm].append(accs[-1][1])
    mean_during = float(np.mean(final["during"]))
    mean_none = float(np.mean(final["none"]))
    _report(9, mean_during > 0.8 and mean_none <= 0.6,
            f"extended: mean accuracy during {mean_during:.3f}, "
            f"none {mean_none:.3f}")


# -- 10: gradient diagnostics at flossing epochs --------------------------------

def test_criterion_10_diagnostics():
    t0 = time.time()
    opts = dict(experiments.FIG4_DURING_DEFAULTS, delay=70, seq_len=150,
                epochs=211, arms=("during",), diag_grad_h0=True,
                diag_dldw_svd=True, eval_every=100, floss_epochs=250)
    ratios = []
    s20_trip = {-1: [], 0: [], +1: []}
    for seed in range(5):
        rows = experiments.fig4_during(opts, seed)["during_xor"]
        g = {r[2]: r[6] for r in rows if r[6] != ""}
        s20 = {r[2]: r[8] for r in rows if r[8] != ""}
        for e in (100, 200):
            ratios.append(g[e] / max(g[e - 1], 1e-300))
            for off in (-1, 0, 1):
                s20_trip[off].append(s20[e + off])
    med_ratio = float(np.median(ratios))
    med_before = float(np.median(s20_trip[-1]))
    med_at = float(np.median(s20_trip[0]))
    med_after = float(np.median(s20_trip[1]))
    ok = med_ratio > 10.0 and med_at > med_before and med_at > med_after
    _report(10, ok, f"median grad_h0 spike ratio {med_ratio:.1f}, "
                    f"sigma_20 {med_before:.2e} -> {med_at:.2e} -> "
                    f"{med_after:.2e}, {time.time() - t0:.0f} s")


# -- 11: exponent control for LSTM and ReLU -------------------------------------

def test_criterion_11_lstm_relu():
    t0 = time.time()
    opts = dict(experiments.FIGS1_LSTM_RELU_DEFAULTS)
    finals = {"lstm": [], "vanilla_relu": []}
    for seed in range(10):
        rows = experiments.figs1_lstm_relu(opts, seed)["lstm_relu"]
        for (s, kind, e, lam, loss) in rows:
            if e == opts["epochs"] - 1:
                finals[kind].append(lam)
    ok = True
    detail = []
    for kind, lams in finals.items():
        hits = sum(abs(l) < 0.1 for l in lams)
        detail.append(f"{kind} {hits}/10")
        ok = ok and hits >= 7
    _report(11, ok, ", ".join(detail) + f", {time.time() - t0:.0f} s")


# -- 12: QR step cost scaling ----------------------------------------------------

def test_criterion_12_qr_cost_scaling():
    n, reps = 128, 256
    rng = np.random.default_rng(0)
    ks = (8, 16, 32)
    mats = {k: rng.standard_normal((reps, n, k)) for k in ks}
    times = {k: float("inf") for k in ks}
    # interleave the sizes across repeat rounds so transient machine load
    # cannot skew one size; keep the per-round minimum
    for _ in range(9):
        for k in ks:
            t0 = time.perf_counter()
            linalg.qr_positive(mats[k])
            times[k] = min(times[k], (time.perf_counter() - t0) / reps)
    r1 = times[16] / times[8]
    r2 = times[32] / times[16]
    # quadratic cost quadruples per doubling; allow a factor 2 either way
    ok = 2.0 <= r1 <= 8.0 and 2.0 <= r2 <= 8.0
    _report(12, ok, f"per-factorization times (us) "
                    f"{ {k: round(v * 1e6, 1) for k, v in times.items()} }, "
                    f"doubling ratios {r1:.2f}, {r2:.2f} (band [2, 8])")
