"""Synthetic sequence tasks with controllable temporal span.

Targets are functions of inputs a fixed delay in the past, so the temporal
credit-assignment horizon is set directly by ``delay``:

* delayed_copy              y_t = x_{t-d},   x ~ Unif(0, 1)
* temporal_xor_continuous   y_t = |x_{t-d/2} - x_{t-d}|,  x ~ Unif(0, 1)
* temporal_xor_binary       y_t = x_{t-d/2} XOR x_{t-d},  x ~ Bernoulli(1/2)
* spatial_xor               y_t = x1_{t-d} XOR x2_{t-d} XOR x3_{t-d}

Binary inputs are fed to the network as raw 0/1 values (no centering).
Targets exist only once a full delay of input history is available; the
``valid`` mask marks those steps, and losses and accuracy average over the
masked steps only. Continuous tasks use mean squared error; binary tasks use
binary cross-entropy on logits with the logistic squashing applied inside
the loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

KINDS = ("delayed_copy", "temporal_xor_continuous", "temporal_xor_binary",
         "spatial_xor")

BINARY_KINDS = ("temporal_xor_binary", "spatial_xor")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    delay: int
    seq_len: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.delay < 1:
            raise ValueError("delay must be at least 1")
        if self.kind.startswith("temporal_xor") and self.delay % 2:
            raise ValueError("temporal XOR needs an even delay")
        if self.seq_len <= self.delay:
            raise ValueError("sequence must be longer than the delay")

    @property
    def input_dim(self) -> int:
        return 3 if self.kind == "spatial_xor" else 1

    @property
    def output_dim(self) -> int:
        return 1

    @property
    def is_binary(self) -> bool:
        return self.kind in BINARY_KINDS


@dataclass
class Batch:
    inputs: np.ndarray   # (T, input_dim, b)
    targets: np.ndarray  # (T, output_dim, b); zero where not valid
    valid: np.ndarray    # (T,) bool


def generate(task: TaskSpec, batch_size: int, seed: int | None = None) -> Batch:
    """Draw a batch; deterministic under (task, seed)."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng(task.seed if seed is None else seed)
    T, d = task.seq_len, task.delay
    if task.kind in ("delayed_copy", "temporal_xor_continuous"):
        x = rng.random((T, 1, batch_size))
    elif task.kind == "temporal_xor_binary":
        x = rng.integers(0, 2, size=(T, 1, batch_size)).astype(float)
    else:
        x = rng.integers(0, 2, size=(T, 3, batch_size)).astype(float)
    y = np.zeros((T, 1, batch_size))
    valid = np.zeros(T, dtype=bool)
    valid[d:] = True
    if task.kind == "delayed_copy":
        y[d:] = x[:-d]
    elif task.kind == "temporal_xor_continuous":
        y[d:] = np.abs(x[d - d // 2:T - d // 2] - x[:-d])
    elif task.kind == "temporal_xor_binary":
        a = x[d - d // 2:T - d // 2]
        b = x[:-d]
        y[d:] = np.abs(a - b)
    else:
        y[d:, 0] = np.mod(x[:-d].sum(axis=1), 2.0)
    return Batch(inputs=x, targets=y, valid=valid)


def _check_shapes(predictions: np.ndarray, batch: Batch) -> None:
    if predictions.shape != batch.targets.shape:
        raise ValueError(f"predictions shape {predictions.shape} does not "
                         f"match targets {batch.targets.shape}")


def task_loss(kind: str, predictions: np.ndarray, batch: Batch) -> float:
    """Mean per-entry loss over valid steps and batch members.

    Squared error for the continuous tasks; binary cross-entropy between the
    targets and logistic(predictions) for the binary ones.
    """
    _check_shapes(predictions, batch)
    if not np.all(np.isfinite(predictions)):
        raise ValueError("predictions contain non-finite values")
    z = predictions[batch.valid]
    y = batch.targets[batch.valid]
    if kind in BINARY_KINDS:
        per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
        return float(per.mean())
    return float(((z - y) ** 2).mean())


def accuracy(predictions: np.ndarray, batch: Batch) -> float:
    """Fraction of valid steps classified correctly (logit > 0 means class 1;
    a tied logit of exactly zero counts as class 0). Binary tasks only."""
    _check_shapes(predictions, batch)
    kinds_ok = np.isin(batch.targets[batch.valid], (0.0, 1.0)).all()
    if not kinds_ok:
        raise ValueError("accuracy is defined for binary tasks only")
    z = predictions[batch.valid]
    y = batch.targets[batch.valid]
    return float(((z > 0.0).astype(float) == y).mean())


def batch_to_csv(batch: Batch, path) -> None:
    T, din, b = batch.inputs.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["b_index", "t"] + [f"x{i + 1}" for i in range(din)] + \
            [f"y{i + 1}" for i in range(batch.targets.shape[1])] + ["valid"]
        w.writerow(header)
        for bi in range(b):
            for t in range(T):
                row = [bi, t]
                row += ["%.17g" % v for v in batch.inputs[t, :, bi]]
                row += ["%.17g" % v for v in batch.targets[t, :, bi]]
                row.append(int(batch.valid[t]))
                w.writerow(row)
