"""Experiment presets: named, parameterized runs that emit CSV rows.

Each preset is a plain function taking an options dict and a seed and
returning {csv_name: rows}. Defaults are desk scale (minutes); overrides
scale them up. The CLI wires presets to config files and a worker pool;
the acceptance suite calls the same functions directly.
"""

from __future__ import annotations

import numpy as np

from . import conditioning, lyapunov, models, tasks, train
from .flossing import FlossingConfig, floss
from .models import ArchitectureSpec
from .optim import AdamConfig
from .tasks import TaskSpec
from .train import Diagnostics, TrainConfig


def _gain_for_seed(seed: int, mode) -> float:
    if isinstance(mode, (int, float)):
        return float(mode)
    if mode == "uniform":
        return float(np.random.default_rng(
            np.random.SeedSequence([int(seed), 0x6A])).uniform(0.0, 1.0))
    raise ValueError(f"unknown gain mode {mode!r}")


# -- exponent control ---------------------------------------------------------

# eta 3e-3: at 1e-3 the low-gain draws cannot reach target 0 inside the
# 100-epoch budget (exponent climbs monotonically but too slowly)
FIG1_TARGETS_DEFAULTS = {
    "kind": "vanilla_tanh",
    "n_units": 32,
    "gain": "uniform",
    "targets": (-1.0, -0.5, 0.0),
    "epochs": 100,
    "t_floss": 100,
    "t_ons": 1,
    "eta": 3e-3,
    "batch": 1,
}


def fig1_targets(opts: dict, seed: int) -> dict:
    """Drive the first exponent of random networks to several targets."""
    spec = ArchitectureSpec(opts["kind"], opts["n_units"])
    rows = []
    for target in opts["targets"]:
        gain = _gain_for_seed(seed, opts["gain"])
        params = models.init_gaussian(spec, gain, seed)
        cfg = FlossingConfig(k=1, targets=np.array([target]),
                             t_floss=opts["t_floss"], t_ons=opts["t_ons"],
                             epochs=opts["epochs"], batch=opts["batch"],
                             adam=AdamConfig(eta=opts["eta"]))
        _, record = floss(spec, params, cfg, seed)
        for e, loss, lams in zip(record.epochs, record.losses, record.lambdas):
            rows.append((seed, e, lams[0], target, loss))
    return {"lambda_targets": rows}


# measurement uses t_ons = 1: a strongly contracting unflossed network can
# lose full-basis rank within a few steps between reorthonormalizations
FIG1_SPECTRUM_DEFAULTS = {
    "kind": "vanilla_tanh",
    "n_units": 32,
    "gain": "uniform",
    "k_list": (1, 16, 32),
    "epochs": 1500,
    "t_floss": 100,
    "t_ons": 1,
    "eta": 3e-3,
    "t_sim": 2000,
    "t_transient": 500,
    "measure_t_ons": 1,
}


def fig1_spectrum(opts: dict, seed: int) -> dict:
    """Full spectrum after flossing different numbers of exponents
    (k_flossed = 0 rows are the unflossed baseline)."""
    spec = ArchitectureSpec(opts["kind"], opts["n_units"])
    gain = _gain_for_seed(seed, opts["gain"])
    base = models.init_gaussian(spec, gain, seed)
    rows = []

    def measure(params, k_flossed):
        est = lyapunov.lyapunov_spectrum(spec, params, k=spec.state_dim,
                                         t_sim=opts["t_sim"],
                                         t_ons=opts["measure_t_ons"],
                                         t_transient=opts["t_transient"],
                                         seed=seed + 1)
        for i, lam in enumerate(est.exponents, start=1):
            rows.append((seed, k_flossed, i, lam))

    measure(base, 0)
    for k in opts["k_list"]:
        cfg = FlossingConfig(k=int(k), t_floss=opts["t_floss"],
                             t_ons=opts["t_ons"], epochs=opts["epochs"],
                             adam=AdamConfig(eta=opts["eta"]))
        flossed, _ = floss(spec, base, cfg, seed)
        measure(flossed, int(k))
    return {"spectrum": rows}


# -- conditioning -------------------------------------------------------------

FIG2_CONDITION_DEFAULTS = {
    "n_units": 40,
    "gain": 1.0,
    "k_floss": 15,
    "floss_epochs": 300,
    "t_floss": 150,
    "horizons": (100, 200, 300),
    "m": 5,
    "tau": 500,
    "prec_bits": 256,
    "k_measure": 20,
    "t_sim": 2000,
    "budget_log_kappa": float(np.log(1e5)),
    "budget_horizon": 300,
}


def fig2_condition(opts: dict, seed: int) -> dict:
    """Direct vs exponent-based condition numbers, before and after
    flossing, plus usable tangent dimensions at a fixed budget."""
    spec = ArchitectureSpec("vanilla_tanh", opts["n_units"])
    base = models.init_gaussian(spec, float(opts["gain"]), seed)
    cfg = FlossingConfig(k=int(opts["k_floss"]), t_floss=opts["t_floss"],
                         epochs=opts["floss_epochs"])
    flossed, _ = floss(spec, base, cfg, seed)
    cond_rows = []
    dim_rows = []
    for variant, params in (("unflossed", base), ("flossed", flossed)):
        reports = conditioning.condition_scan(
            spec, params, tau=opts["tau"], horizons=list(opts["horizons"]),
            m=int(opts["m"]), seed=seed, prec_bits=int(opts["prec_bits"]))
        for r in reports:
            cond_rows.append((seed, variant, r.horizon, r.m,
                              r.log_kappa_direct, r.log_kappa_estimate))
        est = lyapunov.lyapunov_spectrum(spec, params, k=int(opts["k_measure"]),
                                         t_sim=opts["t_sim"], t_ons=5,
                                         t_transient=500, seed=seed + 1)
        lam = np.sort(est.exponents)[::-1]
        m_usable = conditioning.usable_dimensions(
            lam, int(opts["budget_horizon"]), float(opts["budget_log_kappa"]))
        dim_rows.append((seed, variant, m_usable))
    return {"condition": cond_rows, "usable_dims": dim_rows}


# -- task training ------------------------------------------------------------

def _train_arm(spec, params, task, opts, seed, schedule):
    cfg = TrainConfig(
        task=task,
        epochs=int(opts["epochs"]),
        batch=int(opts["batch"]),
        adam=AdamConfig(eta=float(opts["eta"])),
        flossing_schedule=tuple(schedule),
        eval_every=int(opts["eval_every"]),
        eval_batch=int(opts["eval_batch"]),
        diagnostics=Diagnostics(
            grad_h0_norm=bool(opts.get("diag_grad_h0", False)),
            dldw_svd=bool(opts.get("diag_dldw_svd", False)),
        ),
    )
    return train.train(spec, params, cfg, seed)


def _floss_cfg(opts) -> FlossingConfig:
    return FlossingConfig(k=int(opts["k_floss"]), t_floss=int(opts["t_floss"]),
                          epochs=int(opts["floss_epochs"]),
                          t_ons=int(opts.get("floss_t_ons", 1)))


FIG3_PREFLOSS_DEFAULTS = {
    "kind": "vanilla_tanh",
    "n_units": 48,
    "gain": 1.0,
    "delay": 20,
    "seq_len": 80,
    "epochs": 2000,
    "batch": 16,
    "eta": 1e-3,
    "eval_every": 100,
    "eval_batch": 64,
    "k_floss": 36,
    "floss_epochs": 300,
    "t_floss": 80,
    "arms": ("prefloss", "none"),
}


def fig3_prefloss(opts: dict, seed: int) -> dict:
    """Delayed copy with and without flossing before training."""
    spec = ArchitectureSpec(opts["kind"], opts["n_units"])
    task = TaskSpec("delayed_copy", delay=int(opts["delay"]),
                    seq_len=int(opts["seq_len"]))
    rows = []
    for arm in opts["arms"]:
        params = models.init_gaussian(spec, float(opts["gain"]), seed)
        schedule = [(0, _floss_cfg(opts))] if arm == "prefloss" else []
        _, record = _train_arm(spec, params, task, opts, seed, schedule)
        for r in record.rows:
            if "test_loss" in r:
                rows.append((seed, arm, r["epoch"], r["train_loss"],
                             r["test_loss"]))
    return {"prefloss_copy": rows}


FIG4_DURING_DEFAULTS = {
    "kind": "vanilla_tanh",
    "task": "temporal_xor_binary",
    "n_units": 48,
    "gain": 1.0,
    "init": "gaussian",
    "delay": 30,
    "seq_len": 80,
    "epochs": 3000,
    "batch": 16,
    "eta": 1e-3,
    "eval_every": 100,
    "eval_batch": 64,
    "k_floss": 36,
    "floss_epochs": 150,
    "t_floss": 80,
    "protocol": "five_point",
    "arms": ("during", "none"),
    "diag_grad_h0": False,
    "diag_dldw_svd": False,
}

# episode placement for flossing during training; "two_point" runs a second
# episode after 500 task epochs, "five_point" every 100 epochs up to 400
PROTOCOLS = {
    "five_point": (0, 100, 200, 300, 400),
    "two_point": (0, 500),
}


def fig4_during(opts: dict, seed: int) -> dict:
    """Binary XOR tasks with flossing during training, before only, or
    not at all."""
    spec = ArchitectureSpec(opts["kind"], opts["n_units"])
    task = TaskSpec(opts["task"], delay=int(opts["delay"]),
                    seq_len=int(opts["seq_len"]))
    if task.input_dim != spec.input_dim:
        spec = ArchitectureSpec(opts["kind"], opts["n_units"],
                                input_dim=task.input_dim)
    rows = []
    for arm in opts["arms"]:
        if opts["init"] == "orthogonal":
            params = models.init_orthogonal(spec, seed)
        else:
            params = models.init_gaussian(spec, float(opts["gain"]), seed)
        if arm == "during":
            epochs = PROTOCOLS[opts["protocol"]]
            schedule = [(e, _floss_cfg(opts)) for e in epochs
                        if e <= int(opts["epochs"])]
        elif arm == "prefloss":
            schedule = [(0, _floss_cfg(opts))]
        else:
            schedule = []
        _, record = _train_arm(spec, params, task, opts, seed, schedule)
        for r in record.rows:
            out = (seed, arm, r["epoch"], r["train_loss"],
                   r.get("test_loss", ""), r.get("test_accuracy", ""),
                   r.get("grad_h0_norm", ""), r.get("sigma_1", ""),
                   r.get("sigma_20", ""), r.get("sigma_40", ""))
            rows.append(out)
    return {"during_xor": rows}


FIG5_KSWEEP_DEFAULTS = {
    "kind": "vanilla_tanh",
    "n_units": 48,
    "gain": 1.0,
    "delays": (10, 20, 30),
    "k_list": (8, 24, 36),
    "seq_len": 80,
    "epochs": 1500,
    "batch": 16,
    "eta": 1e-3,
    "eval_every": 250,
    "eval_batch": 64,
    "floss_epochs": 150,
    "t_floss": 80,
    "protocol": "five_point",
}


def fig5_ksweep(opts: dict, seed: int) -> dict:
    """Final accuracy across (delay, flossed-exponent-count) grid."""
    rows = []
    for d in opts["delays"]:
        for k in opts["k_list"]:
            sub = dict(opts)
            sub["delay"] = int(d)
            sub["k_floss"] = int(k)
            sub["arms"] = ("during",)
            out = fig4_during(sub, seed)["during_xor"]
            accs = [r[5] for r in out if r[5] != ""]
            rows.append((seed, int(d), int(k), accs[-1]))
    return {"ksweep": rows}


FIGS1_LSTM_RELU_DEFAULTS = {
    "kinds": ("lstm", "vanilla_relu"),
    "n_units": 32,
    "gain": "uniform",
    "epochs": 100,
    "t_floss": 100,
    "t_ons": 1,
    "eta": 3e-3,
}


def figs1_lstm_relu(opts: dict, seed: int) -> dict:
    """First-exponent flossing toward zero for the gated and rectifier
    architectures."""
    rows = []
    for kind in opts["kinds"]:
        spec = ArchitectureSpec(kind, opts["n_units"])
        gain = _gain_for_seed(seed, opts["gain"])
        params = models.init_gaussian(spec, gain, seed)
        cfg = FlossingConfig(k=1, t_floss=opts["t_floss"], t_ons=opts["t_ons"],
                             epochs=opts["epochs"],
                             adam=AdamConfig(eta=opts["eta"]))
        _, record = floss(spec, params, cfg, seed)
        for e, loss, lams in zip(record.epochs, record.losses, record.lambdas):
            rows.append((seed, kind, e, lams[0], loss))
    return {"lstm_relu": rows}


FIGS_ORTHOGONAL_DEFAULTS = dict(FIG4_DURING_DEFAULTS, init="orthogonal",
                                arms=("during", "none"))


def figs_orthogonal(opts: dict, seed: int) -> dict:
    out = fig4_during(opts, seed)
    return {"orthogonal_xor": out["during_xor"]}


CONVERGENCE_TRACE_DEFAULTS = {
    "kind": "vanilla_tanh",
    "n_units": 40,
    "gain": 1.0,
    "k": 40,
    "t_sim": 1000,
    "t_ons": 5,
    "t_transient": 500,
    "n_checkpoints": 15,
    "indices": (1, 10, 20, 40),
}


def convergence_trace(opts: dict, seed: int) -> dict:
    """Running exponent estimates at log-spaced checkpoints."""
    spec = ArchitectureSpec(opts["kind"], opts["n_units"])
    params = models.init_gaussian(spec, float(opts["gain"]), seed)
    trace, _ = lyapunov.convergence_trace(
        spec, params, k=int(opts["k"]), t_sim=int(opts["t_sim"]),
        t_ons=int(opts["t_ons"]), t_transient=int(opts["t_transient"]),
        seed=seed, n_checkpoints=int(opts["n_checkpoints"]))
    rows = []
    for t, lams in trace:
        for i in opts["indices"]:
            if i <= lams.size:
                rows.append((seed, t, int(i), lams[int(i) - 1]))
    return {"convergence": rows}


CSV_HEADERS = {
    "lambda_targets": ("seed", "epoch", "lambda_1", "target", "loss"),
    "spectrum": ("seed", "k_flossed", "i", "lambda_i"),
    "condition": ("seed", "variant", "horizon", "m", "log_kappa_direct",
                  "log_kappa_estimate"),
    "usable_dims": ("seed", "variant", "m_usable"),
    "prefloss_copy": ("seed", "arm", "epoch", "train_loss", "test_loss"),
    "during_xor": ("seed", "arm", "epoch", "train_loss", "test_loss",
                   "test_accuracy", "grad_h0_norm", "sigma_1", "sigma_20",
                   "sigma_40"),
    "orthogonal_xor": ("seed", "arm", "epoch", "train_loss", "test_loss",
                       "test_accuracy", "grad_h0_norm", "sigma_1", "sigma_20",
                       "sigma_40"),
    "ksweep": ("seed", "delay", "k_floss", "final_accuracy"),
    "lstm_relu": ("seed", "kind", "epoch", "lambda_1", "loss"),
    "convergence": ("seed", "t", "i", "lambda_i_running"),
}


PRESETS = {
    "fig1_targets": (fig1_targets, FIG1_TARGETS_DEFAULTS,
                     "drive the first exponent to targets"),
    "fig1_spectrum": (fig1_spectrum, FIG1_SPECTRUM_DEFAULTS,
                      "spectrum after flossing k exponents"),
    "fig2_condition": (fig2_condition, FIG2_CONDITION_DEFAULTS,
                       "condition number: direct vs exponent estimate"),
    "fig3_prefloss": (fig3_prefloss, FIG3_PREFLOSS_DEFAULTS,
                      "delayed copy with and without preflossing"),
    "fig4_during": (fig4_during, FIG4_DURING_DEFAULTS,
                    "binary XOR with flossing during training"),
    "fig5_ksweep": (fig5_ksweep, FIG5_KSWEEP_DEFAULTS,
                    "accuracy across delay and flossed-count grid"),
    "figS1_lstm_relu": (figs1_lstm_relu, FIGS1_LSTM_RELU_DEFAULTS,
                        "exponent control for LSTM and ReLU cells"),
    "figS_orthogonal": (figs_orthogonal, FIGS_ORTHOGONAL_DEFAULTS,
                        "flossing on orthogonally initialized networks"),
    "convergence_trace": (convergence_trace, CONVERGENCE_TRACE_DEFAULTS,
                          "running exponent estimates over time"),
}


def preset_check(name: str, opts: dict) -> list[str]:
    """Structural sanity findings for merged options (no execution)."""
    findings = []
    n = int(opts.get("n_units", 1))
    kind = opts.get("kind", "vanilla_tanh")
    state_dim = 2 * n if kind == "lstm" else n
    if "delay" in opts and "seq_len" in opts:
        if int(opts["seq_len"]) <= int(opts["delay"]):
            findings.append("sequence shorter than delay")
    if "k_floss" in opts and int(opts["k_floss"]) > state_dim:
        findings.append("k exceeds state dimension")
    if "k" in opts and int(opts["k"]) > state_dim:
        findings.append("k exceeds state dimension")
    if "k_list" in opts and any(int(k) > state_dim for k in opts["k_list"]):
        findings.append("k exceeds state dimension")
    if "protocol" in opts and opts["protocol"] not in PROTOCOLS:
        findings.append(f"unknown protocol {opts['protocol']!r}")
    if "task" in opts and opts["task"] not in tasks.KINDS:
        findings.append(f"unknown task {opts['task']!r}")
    if "delay" in opts and opts.get("task", "").startswith("temporal_xor") \
            and int(opts["delay"]) % 2:
        findings.append("temporal XOR needs an even delay")
    return findings
