"""Task training by backpropagation through time, with optional episodes of
Lyapunov-exponent regularization interleaved on a schedule.

The gradient is exact reverse mode through the fully unrolled trajectory (no
truncation, no gradient clipping anywhere). Two gradient diagnostics are
available per epoch: the norm of the loss gradient with respect to the
initial state, which isolates the longest propagation path through the
unrolled dynamics, and selected singular values of the recurrent weight
gradient, which track how many directions of the parameter update carry
signal.

Scheduling conventions: at a scheduled epoch the regularization episode runs
first, then the epoch's task batch is drawn, diagnostics are taken from the
task gradient, and the ADAM update is applied. The task optimizer keeps its
moment estimates across episodes. Sequences start from h0 = 0 so the
initial-state gradient is well defined.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import linalg, models, tasks
from .flossing import FlossingConfig, floss
from .models import ArchitectureSpec, ModelParams
from .optim import Adam, AdamConfig
from .tasks import Batch, TaskSpec

CSV_FIELDS = ("epoch", "train_loss", "test_loss", "test_accuracy",
              "grad_h0_norm", "sigma_1", "sigma_20", "sigma_40")


@dataclass(frozen=True)
class Diagnostics:
    grad_h0_norm: bool = False
    dldw_svd: bool = False


@dataclass
class TrainConfig:
    task: TaskSpec
    epochs: int
    batch: int = 16
    adam: AdamConfig = field(default_factory=AdamConfig)
    flossing_schedule: tuple = ()
    eval_every: int = 50
    eval_batch: int = 64
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("bad epoch/batch/eval settings")
        for e, cfg in self.flossing_schedule:
            if not 0 <= e <= self.epochs:
                raise ValueError(f"scheduled epoch {e} outside [0, {self.epochs}]")
            if not isinstance(cfg, FlossingConfig):
                raise TypeError("schedule entries must be (epoch, FlossingConfig)")


@dataclass
class TrainRecord:
    rows: list = field(default_factory=list)

    def append(self, **kw) -> None:
        self.rows.append(kw)

    def column(self, key):
        return [r[key] for r in self.rows if key in r]

    def epochs_with(self, key):
        return [r["epoch"] for r in self.rows if key in r]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                out = []
                for k in CSV_FIELDS:
                    if k not in r:
                        out.append("")
                    elif k == "epoch":
                        out.append(r[k])
                    else:
                        out.append("%.17g" % r[k])
                w.writerow(out)


class NonFiniteGradientError(RuntimeError):
    pass


def _tape_forward_loss(spec: ArchitectureSpec, pv: dict, batch: Batch,
                       h0: ad.Var, kind: str):
    """Unrolled forward pass on the tape; returns the mean task loss Var."""
    n = spec.n_units
    T = batch.inputs.shape[0]
    b = batch.inputs.shape[2]
    binary = kind in tasks.BINARY_KINDS
    if spec.kind == "lstm":
        h = ad.rows(h0, 0, n)
        c = ad.rows(h0, n, 2 * n)
    else:
        h = h0
        c = None
    total = None
    n_valid = int(batch.valid.sum())
    for t in range(T):
        x = ad.Var(batch.inputs[t])
        if spec.kind == "lstm":
            def pre(z):
                lin = ad.add(ad.matmul(pv[f"U_{z}"], h), ad.matmul(pv[f"Wx_{z}"], x))
                return ad.add_bias_scalar(lin, pv[f"b_{z}"])
            f = ad.sigmoid(pre("f"))
            i = ad.sigmoid(pre("i"))
            o = ad.sigmoid(pre("o"))
            u = ad.tanh(pre("c"))
            c = ad.add(ad.mul(f, c), ad.mul(i, u))
            h = ad.mul(o, ad.tanh(c))
        else:
            if spec.kind == "vanilla_tanh":
                phi = ad.tanh(h)
            elif spec.kind == "vanilla_relu":
                phi = ad.relu(h)
            else:
                phi = h
            h = ad.add(ad.matmul(pv["W"], phi), ad.matmul(pv["V"], x))
        if not np.all(np.isfinite(h.value)):
            raise NonFiniteGradientError(f"state non-finite at step {t + 1}")
        if not batch.valid[t]:
            continue
        z = ad.add_bias_col(ad.matmul(pv["W_out"], h), pv["b_out"])
        y = batch.targets[t]
        if binary:
            term = ad.bce_logits_sum(z, y)
        else:
            term = ad.vsum(ad.square(ad.add_const(z, -y)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return None
    denom = n_valid * b * spec.output_dim
    return ad.scale(total, 1.0 / denom)


def bptt_grad(spec: ArchitectureSpec, params: ModelParams, batch: Batch,
              kind: str | None = None, h0: np.ndarray | None = None):
    """Exact full-unroll gradient of the task loss.

    Returns (loss, grads); grads carries every parameter plus "h0". The
    loss kind is inferred from the targets when not given (binary targets
    use cross-entropy on logits, anything else squared error).
    """
    if kind is None:
        vals = batch.targets[batch.valid]
        kind = "temporal_xor_binary" if np.isin(vals, (0.0, 1.0)).all() \
            else "delayed_copy"
    b = batch.inputs.shape[2]
    if h0 is None:
        h0 = np.zeros((spec.state_dim, b))
    h0v = ad.Var(h0)
    pv = {name: ad.Var(params[name]) for name in spec.param_names()}
    loss = _tape_forward_loss(spec, pv, batch, h0v, kind)
    if loss is None:
        grads = {name: np.zeros_like(params[name]) for name in spec.param_names()}
        grads["h0"] = np.zeros_like(h0)
        return 0.0, grads
    ad.backward(loss)
    grads = {name: ad.grad_or_zeros(v) for name, v in pv.items()}
    grads["h0"] = ad.grad_or_zeros(h0v)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    return float(loss.value), grads


def evaluate(spec: ArchitectureSpec, params: ModelParams, task: TaskSpec,
             batch: Batch):
    """Loss (and accuracy for binary tasks) on a batch, plain numpy path."""
    b = batch.inputs.shape[2]
    h0 = np.zeros((spec.state_dim, b))
    states = models.forward_states(spec, params, batch.inputs, h0)
    preds = models.readout(spec, params, states)
    loss = tasks.task_loss(task.kind, preds, batch)
    acc = tasks.accuracy(preds, batch) if task.is_binary else None
    return loss, acc


def grad_h0_norm(spec: ArchitectureSpec, params: ModelParams, batch: Batch,
                 kind: str | None = None) -> float:
    """Norm of the loss gradient with respect to the initial state: the one
    gradient term that traverses the full unrolled trajectory."""
    _, grads = bptt_grad(spec, params, batch, kind=kind)
    return float(np.linalg.norm(grads["h0"]))


def dldw_svd_diag(spec: ArchitectureSpec, params: ModelParams, batch: Batch,
                  indices=(1, 20, 40), kind: str | None = None) -> np.ndarray:
    """Selected singular values (1-based indices) of the recurrent weight
    gradient. Vanilla architectures only."""
    if spec.kind == "lstm":
        raise ValueError("recurrent-weight gradient spectrum targets the "
                         "vanilla architectures")
    if max(indices) > spec.n_units:
        raise ValueError(f"index {max(indices)} exceeds n_units={spec.n_units}")
    _, grads = bptt_grad(spec, params, batch, kind=kind)
    sv = linalg.singular_values(grads["W"])
    return np.array([sv[i - 1] for i in indices])


def _seeded(seed: int, tag: int, *rest: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, *rest]))


def _train_batch(task: TaskSpec, b: int, seed: int, epoch: int) -> Batch:
    gen_seed = int(_seeded(seed, 0x7B, epoch).integers(2**63))
    return tasks.generate(task, b, seed=gen_seed)


def _eval_batch(task: TaskSpec, b: int, seed: int, counter: int) -> Batch:
    # evaluation stream is disjoint from the training stream by tag
    gen_seed = int(_seeded(seed, 0xE7, counter).integers(2**63))
    return tasks.generate(task, b, seed=gen_seed)


def _checkpoint(directory, params: ModelParams, adam: Adam, epoch: int) -> None:
    os.makedirs(directory, exist_ok=True)
    models.save_params(params, os.path.join(directory, "params.txt"))
    state = adam.state()
    models.write_array_sections(os.path.join(directory, "adam_m.txt"),
                                "flossrnn-adam 1", {"t": str(state["t"])},
                                state["m"])
    models.write_array_sections(os.path.join(directory, "adam_v.txt"),
                                "flossrnn-adam 1", {"t": str(state["t"])},
                                state["v"])
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump({"next_epoch": epoch + 1}, fh)


def _load_checkpoint(directory, adam: Adam):
    params = models.load_params(os.path.join(directory, "params.txt"))
    meta_m, m = models.read_array_sections(os.path.join(directory, "adam_m.txt"),
                                           "flossrnn-adam 1")
    _, v = models.read_array_sections(os.path.join(directory, "adam_v.txt"),
                                      "flossrnn-adam 1")
    adam.load_state({"t": int(meta_m["t"]), "m": m, "v": v})
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    return params, int(meta["next_epoch"])


def train(spec: ArchitectureSpec, params: ModelParams, config: TrainConfig,
          seed: int, checkpoint_dir=None, resume: bool = False):
    """ADAM over the exact BPTT gradient, one fresh batch per epoch.

    Scheduled flossing episodes run at the start of their epoch. Held-out
    evaluation happens every ``eval_every`` epochs and at the final epoch,
    on batches from a seed stream disjoint from training. Returns the
    trained parameters and the per-epoch record.
    """
    task = config.task
    if task.input_dim != spec.input_dim:
        raise ValueError("task input_dim does not match architecture")
    work = params.copy()
    adam = Adam(spec.param_names(), config.adam)
    start = 0
    if resume and checkpoint_dir and os.path.exists(
            os.path.join(checkpoint_dir, "meta.json")):
        work, start = _load_checkpoint(checkpoint_dir, adam)
    record = TrainRecord()
    schedule = dict(config.flossing_schedule)
    eval_count = 0
    for epoch in range(start, config.epochs):
        if epoch in schedule and schedule[epoch].epochs > 0:
            floss_seed = int(_seeded(seed, 0xF7, epoch).integers(2**63))
            work, _ = floss(spec, work, schedule[epoch], floss_seed)
        batch = _train_batch(task, config.batch, seed, epoch)
        train_loss, grads = bptt_grad(spec, work, batch, kind=task.kind)
        row = {"epoch": epoch, "train_loss": train_loss}
        if config.diagnostics.grad_h0_norm:
            row["grad_h0_norm"] = float(np.linalg.norm(grads["h0"]))
        if config.diagnostics.dldw_svd:
            sv = linalg.singular_values(grads["W"])
            for i in (1, 20, 40):
                if i <= sv.size:
                    row[f"sigma_{i}"] = float(sv[i - 1])
        adam.step(work.tensors, grads)
        is_eval = (epoch % config.eval_every == 0) or (epoch == config.epochs - 1)
        if is_eval:
            eval_count += 1
            test = _eval_batch(task, config.eval_batch, seed, eval_count)
            test_loss, test_acc = evaluate(spec, work, task, test)
            row["test_loss"] = test_loss
            if test_acc is not None:
                row["test_accuracy"] = test_acc
        record.append(**row)
        if checkpoint_dir and config.checkpoint_every and \
                (epoch + 1) % config.checkpoint_every == 0:
            _checkpoint(checkpoint_dir, work, adam, epoch)
    if checkpoint_dir:
        _checkpoint(checkpoint_dir, work, adam, config.epochs - 1)
    return work, record
