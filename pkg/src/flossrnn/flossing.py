"""Regularization of Lyapunov exponents by gradient descent.

The loss is the squared distance of the first k Lyapunov exponents from
target values (zero by default). Exponents are estimated by tangent-space
propagation with periodic QR reorthonormalization, and the loss gradient is
taken through the whole estimator: through the QR factorizations via the
analytic pullback, through the tangent products (so the adjoint reaches each
one-step Jacobian), and through each Jacobian's dependence on the weights
and on the state trajectory itself, which makes the backward pass aware of
second derivatives of the cell map.

Known behavior: driving the first exponent toward a positive target tends
to stall near zero rather than produce genuinely expansive dynamics; this
is a property of the optimization, not an error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import lyapunov, models
from .models import ArchitectureSpec, ModelParams
from .optim import Adam, AdamConfig


class FlossingDivergedError(RuntimeError):
    pass


@dataclass
class FlossingConfig:
    """Settings for one flossing run.

    ``q_init`` chooses whether the state and tangent basis are freshly
    seeded every epoch ("fresh", default) or carried over from the end of
    the previous epoch ("carry"); input streams are re-drawn per epoch in
    both modes.
    """

    k: int
    t_floss: int
    epochs: int
    targets: np.ndarray | None = None
    t_ons: int = 1
    adam: AdamConfig = field(default_factory=AdamConfig)
    batch: int = 1
    q_init: str = "fresh"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.t_ons < 1 or self.t_floss < 1:
            raise ValueError("t_floss and t_ons must be positive")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")
        if self.q_init not in ("fresh", "carry"):
            raise ValueError("q_init must be 'fresh' or 'carry'")
        if self.targets is None:
            self.targets = np.zeros(self.k)
        else:
            self.targets = np.asarray(self.targets, dtype=float)
            if self.targets.shape != (self.k,):
                raise ValueError("targets must have length k")


@dataclass
class FlossRecord:
    """Per-epoch record of a flossing run."""

    k: int
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lambdas: list[np.ndarray] = field(default_factory=list)

    def append(self, epoch: int, loss: float, lams: np.ndarray) -> None:
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.lambdas.append(np.array(lams, dtype=float))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"] + [f"lambda_{i + 1}" for i in range(self.k)])
            for e, loss, lams in zip(self.epochs, self.losses, self.lambdas):
                w.writerow([e, "%.17g" % loss] + ["%.17g" % v for v in lams])


def flossing_loss(exponents, targets) -> float:
    """Sum of squared deviations of the exponents from their targets."""
    exponents = np.asarray(exponents, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if exponents.shape != targets.shape:
        raise ValueError("exponents and targets must have equal length")
    return float(np.sum((exponents - targets) ** 2))


def _one_minus_sq(x: ad.Var) -> ad.Var:
    return ad.add_const(ad.scale(ad.mul(x, x), -1.0), 1.0)


def _one_minus(x: ad.Var) -> ad.Var:
    return ad.add_const(ad.scale(x, -1.0), 1.0)


def _tape_step_vanilla(kind: str, pv: dict, h: ad.Var, x: np.ndarray):
    """One vanilla/linear step on the tape; returns (h_next, jacobian)."""
    w, v = pv["W"], pv["V"]
    xvar = ad.Var(x)
    if kind == "linear":
        h_next = ad.add(ad.matmul(w, h), ad.matmul(v, xvar))
        return h_next, w
    if kind == "vanilla_tanh":
        phi = ad.tanh(h)
        dphi = _one_minus_sq(phi)
    else:
        phi = ad.relu(h)
        dphi = ad.heaviside0(h)
    h_next = ad.add(ad.matmul(w, phi), ad.matmul(v, xvar))
    return h_next, ad.scale_cols(w, dphi)


def _tape_step_lstm(pv: dict, h: ad.Var, c: ad.Var, x: np.ndarray):
    """One LSTM step on the tape; returns (h', c', jacobian on (h, c))."""
    xvar = ad.Var(x)

    def pre(z):
        lin = ad.add(ad.matmul(pv[f"U_{z}"], h), ad.matmul(pv[f"Wx_{z}"], xvar))
        return ad.add_bias_scalar(lin, pv[f"b_{z}"])

    f = ad.sigmoid(pre("f"))
    i = ad.sigmoid(pre("i"))
    o = ad.sigmoid(pre("o"))
    u = ad.tanh(pre("c"))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, u))
    th = ad.tanh(c_new)
    h_new = ad.mul(o, th)

    df = ad.mul(f, _one_minus(f))
    di = ad.mul(i, _one_minus(i))
    do = ad.mul(o, _one_minus(o))
    du = _one_minus_sq(u)
    dth = _one_minus_sq(th)
    dc_dh = ad.add(
        ad.add(ad.scale_rows(pv["U_f"], ad.mul(c, df)),
               ad.scale_rows(pv["U_i"], ad.mul(u, di))),
        ad.scale_rows(pv["U_c"], ad.mul(i, du)),
    )
    dc_dc = ad.diag_matrix(f)
    dh_dh = ad.add(ad.scale_rows(pv["U_o"], ad.mul(th, do)),
                   ad.scale_rows(dc_dh, ad.mul(o, dth)))
    dh_dc = ad.diag_matrix(ad.mul(o, ad.mul(dth, f)))
    jac = ad.vstack2(ad.hstack2(dh_dh, dh_dc), ad.hstack2(dc_dh, dc_dc))
    return h_new, c_new, jac


def _floss_forward(spec: ArchitectureSpec, pv: dict, config: FlossingConfig,
                   h0: np.ndarray, q0: np.ndarray, inputs: np.ndarray):
    """Run the recorded forward pass; returns (loss, lambda, final h, final q)."""
    n = spec.n_units
    t_floss, t_ons = config.t_floss, config.t_ons
    if spec.kind == "lstm":
        h = ad.Var(h0[:n])
        c = ad.Var(h0[n:])
    else:
        h = ad.Var(h0)
        c = None
    q = ad.Var(q0)
    gamma = None
    for t in range(t_floss):
        if spec.kind == "lstm":
            h, c, jac = _tape_step_lstm(pv, h, c, inputs[t])
            state_now = np.concatenate([h.value, c.value])
        else:
            h, jac = _tape_step_vanilla(spec.kind, pv, h, inputs[t])
            state_now = h.value
        if not np.all(np.isfinite(state_now)):
            raise FlossingDivergedError(f"state non-finite at step {t + 1}")
        q = ad.matmul(jac, q)
        if (t + 1) % t_ons == 0 or t + 1 == t_floss:
            q, r = ad.qr(q)
            inc = ad.log(ad.diag_part(r))
            gamma = inc if gamma is None else ad.add(gamma, inc)
    lam = ad.scale(gamma, 1.0 / t_floss)
    diff = ad.add_const(lam, -config.targets)
    loss = ad.vsum(ad.square(diff))
    final_h = state_now
    return loss, lam, final_h, q.value


def _stream_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0xF1, epoch, stream]))


def _resolve_run_inputs(spec, config, seed, h0, q0, inputs):
    rng = _stream_rng(seed, 0, 0)
    drawn = rng.standard_normal((config.t_floss, spec.input_dim))
    if inputs is None:
        inputs = drawn
    elif inputs.shape[0] < config.t_floss:
        raise ValueError(f"need {config.t_floss} input steps")
    if h0 is None:
        h0 = rng.standard_normal(spec.state_dim)
    if q0 is None:
        q0 = lyapunov.random_orthonormal(spec.state_dim, config.k, rng)
    return h0, q0, inputs


def flossing_forward(spec: ArchitectureSpec, params: ModelParams,
                     config: FlossingConfig, seed: int,
                     h0: np.ndarray | None = None, q0: np.ndarray | None = None,
                     inputs: np.ndarray | None = None):
    """Loss and exponent estimates of one flossing pass, no gradients."""
    if not 1 <= config.k <= spec.state_dim:
        raise ValueError("k must lie in [1, state_dim]")
    h0, q0, inputs = _resolve_run_inputs(spec, config, seed, h0, q0, inputs)
    pv = {name: ad.Var(params[name]) for name in spec.recurrent_names()}
    loss, lam, _, _ = _floss_forward(spec, pv, config, h0, q0, inputs)
    return float(loss.value), lam.value.copy()


def flossing_grad(spec: ArchitectureSpec, params: ModelParams,
                  config: FlossingConfig, seed: int,
                  h0: np.ndarray | None = None, q0: np.ndarray | None = None,
                  inputs: np.ndarray | None = None):
    """Loss, exponent estimates, and exact parameter gradients for one
    flossing forward pass (readout parameters take no part).

    Returns (loss, lambdas, grads) with grads keyed like the recurrent
    parameters of the architecture.
    """
    if not 1 <= config.k <= spec.state_dim:
        raise ValueError("k must lie in [1, state_dim]")
    h0, q0, inputs = _resolve_run_inputs(spec, config, seed, h0, q0, inputs)
    pv = {name: ad.Var(params[name]) for name in spec.recurrent_names()}
    loss, lam, _, _ = _floss_forward(spec, pv, config, h0, q0, inputs)
    ad.backward(loss)
    grads = {name: ad.grad_or_zeros(v) for name, v in pv.items()}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FlossingDivergedError(f"non-finite gradient for {name}")
    return float(loss.value), lam.value.copy(), grads


def floss(spec: ArchitectureSpec, params: ModelParams, config: FlossingConfig,
          seed: int):
    """Run the flossing optimization loop.

    Each epoch draws a fresh input stream (one per batch member), estimates
    the exponents, and applies one ADAM update on the batch-averaged
    gradient. Returns the updated parameters and the per-epoch record.
    """
    work = params.copy()
    record = FlossRecord(k=config.k)
    if config.epochs == 0:
        return work, record
    adam = Adam(spec.recurrent_names(), config.adam)
    carry: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for epoch in range(config.epochs):
        acc_grads = None
        acc_loss = 0.0
        acc_lam = np.zeros(config.k)
        for stream in range(config.batch):
            rng = _stream_rng(seed, epoch, stream)
            inputs = rng.standard_normal((config.t_floss, spec.input_dim))
            if config.q_init == "carry" and stream in carry:
                h0, q0 = carry[stream]
            else:
                h0 = rng.standard_normal(spec.state_dim)
                q0 = lyapunov.random_orthonormal(spec.state_dim, config.k, rng)
            pv = {name: ad.Var(work[name]) for name in spec.recurrent_names()}
            loss, lam, fh, fq = _floss_forward(spec, pv, config, h0, q0, inputs)
            ad.backward(loss)
            if config.q_init == "carry":
                carry[stream] = (fh, fq)
            acc_loss += float(loss.value)
            acc_lam += lam.value
            grads = {name: ad.grad_or_zeros(v) for name, v in pv.items()}
            if acc_grads is None:
                acc_grads = grads
            else:
                for name in acc_grads:
                    acc_grads[name] += grads[name]
        scale = 1.0 / config.batch
        for name in acc_grads:
            acc_grads[name] *= scale
            if not np.all(np.isfinite(acc_grads[name])):
                raise FlossingDivergedError(f"non-finite gradient for {name}"
                                            f" at epoch {epoch}")
        record.append(epoch, acc_loss * scale, acc_lam * scale)
        adam.step(work.tensors, acc_grads)
    return work, record
