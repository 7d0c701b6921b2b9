"""Recurrent cell definitions, one-step Jacobians, and initializers.

Four architectures are supported:

* ``vanilla_tanh``   h' = W tanh(h) + V x
* ``vanilla_relu``   h' = W max(h, 0) + V x
* ``linear``         h' = W h + V x
* ``lstm``           gated cell; the dynamic state is the pair (h, c) and
                     Jacobians are taken on the stacked 2N state vector,
                     h first, c second.

The LSTM gate map, with logistic gates and tanh cell nonlinearities:

    f = sigm(U_f h + Wx_f x + b_f)        o = sigm(U_o h + Wx_o x + b_o)
    i = sigm(U_i h + Wx_i x + b_i)        u = tanh(U_c h + Wx_c x + b_c)
    c' = f * c + i * u                    h' = o * tanh(c')

Bias terms are scalars broadcast across units. A zero-initialized affine
readout (h only, never c) maps the state to the output; binary losses apply
the logistic squashing themselves, so readout outputs are logits.

ReLU derivative convention: the subgradient at exactly zero pre-activation
is 0 (a measure-zero event, fixed here for reproducibility).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import linalg

KINDS = ("vanilla_tanh", "vanilla_relu", "linear", "lstm")

LSTM_GATES = ("f", "i", "o", "c")

_FMT = "%.17g"  # round-trips float64 exactly


@dataclass(frozen=True)
class ArchitectureSpec:
    """Architecture tag plus the sizes every module needs."""

    kind: str
    n_units: int
    input_dim: int = 1
    output_dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.n_units < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("sizes must be positive")

    @property
    def state_dim(self) -> int:
        return 2 * self.n_units if self.kind == "lstm" else self.n_units

    def param_names(self) -> tuple[str, ...]:
        if self.kind == "lstm":
            names = tuple(f"U_{z}" for z in LSTM_GATES)
            names += tuple(f"Wx_{z}" for z in LSTM_GATES)
            names += tuple(f"b_{z}" for z in LSTM_GATES)
        else:
            names = ("W", "V")
        return names + ("W_out", "b_out")

    def recurrent_names(self) -> tuple[str, ...]:
        """Parameters that shape the state dynamics (readout excluded)."""
        return tuple(n for n in self.param_names() if n not in ("W_out", "b_out"))


@dataclass
class ModelParams:
    """Named parameter bundle. ``tensors`` keys follow spec.param_names();
    scalar biases are stored as 0-d arrays so optimizers can treat every
    entry uniformly."""

    spec: ArchitectureSpec
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.spec.param_names()
        if tuple(self.tensors.keys()) != expected:
            raise ValueError(f"parameter names must be {expected}")
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"parameter {name} has non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


@dataclass
class NetworkState:
    """Recurrent state; ``c`` is present for LSTM only."""

    h: np.ndarray
    c: np.ndarray | None = None

    def as_vector(self) -> np.ndarray:
        return self.h if self.c is None else np.concatenate([self.h, self.c])


def zeros_state(spec: ArchitectureSpec) -> NetworkState:
    n = spec.n_units
    if spec.kind == "lstm":
        return NetworkState(np.zeros(n), np.zeros(n))
    return NetworkState(np.zeros(n))


def random_state(spec: ArchitectureSpec, rng: np.random.Generator) -> NetworkState:
    n = spec.n_units
    if spec.kind == "lstm":
        return NetworkState(rng.standard_normal(n), rng.standard_normal(n))
    return NetworkState(rng.standard_normal(n))


def state_from_vector(spec: ArchitectureSpec, v: np.ndarray) -> NetworkState:
    n = spec.n_units
    if spec.kind == "lstm":
        return NetworkState(v[:n].copy(), v[n:].copy())
    return NetworkState(v.copy())


# -- forward dynamics ---------------------------------------------------------

def step(spec: ArchitectureSpec, params: ModelParams, state: NetworkState,
         x: np.ndarray) -> NetworkState:
    """One update of the recurrent map. ``x`` has length input_dim."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input must have shape ({spec.input_dim},)")
    t = params.tensors
    if spec.kind == "lstm":
        h, c = state.h, state.c
        f = expit(t["U_f"] @ h + t["Wx_f"] @ x + t["b_f"])
        i = expit(t["U_i"] @ h + t["Wx_i"] @ x + t["b_i"])
        o = expit(t["U_o"] @ h + t["Wx_o"] @ x + t["b_o"])
        u = np.tanh(t["U_c"] @ h + t["Wx_c"] @ x + t["b_c"])
        c_new = f * c + i * u
        return NetworkState(o * np.tanh(c_new), c_new)
    h = state.h
    if spec.kind == "vanilla_tanh":
        phi = np.tanh(h)
    elif spec.kind == "vanilla_relu":
        phi = np.maximum(h, 0.0)
    else:
        phi = h
    return NetworkState(t["W"] @ phi + t["V"] @ x)


def jacobian(spec: ArchitectureSpec, params: ModelParams, state: NetworkState,
             x: np.ndarray) -> np.ndarray:
    """Derivative of the next state with respect to the current one,
    evaluated at ``state`` with input ``x``; shape (state_dim, state_dim)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input must have shape ({spec.input_dim},)")
    t = params.tensors
    if spec.kind == "linear":
        return t["W"].copy()
    if spec.kind == "vanilla_tanh":
        return t["W"] * (1.0 - np.tanh(state.h) ** 2)[None, :]
    if spec.kind == "vanilla_relu":
        return t["W"] * (state.h > 0.0).astype(float)[None, :]
    # lstm: blocks of d(h', c')/d(h, c)
    h, c = state.h, state.c
    f = expit(t["U_f"] @ h + t["Wx_f"] @ x + t["b_f"])
    i = expit(t["U_i"] @ h + t["Wx_i"] @ x + t["b_i"])
    o = expit(t["U_o"] @ h + t["Wx_o"] @ x + t["b_o"])
    u = np.tanh(t["U_c"] @ h + t["Wx_c"] @ x + t["b_c"])
    c_new = f * c + i * u
    th = np.tanh(c_new)
    df = f * (1.0 - f)
    di = i * (1.0 - i)
    do = o * (1.0 - o)
    du = 1.0 - u * u
    dth = 1.0 - th * th
    dc_dh = (c * df)[:, None] * t["U_f"] + (u * di)[:, None] * t["U_i"] \
        + (i * du)[:, None] * t["U_c"]
    dc_dc = np.diag(f)
    dh_dh = (th * do)[:, None] * t["U_o"] + (o * dth)[:, None] * dc_dh
    dh_dc = np.diag(o * dth * f)
    return np.block([[dh_dh, dh_dc], [dc_dh, dc_dc]])


def forward_states(spec: ArchitectureSpec, params: ModelParams,
                   inputs: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Batched trajectory, fast path without gradient bookkeeping.

    inputs has shape (T, input_dim, b), h0 shape (state_dim, b); returns
    the states after each step with shape (T, state_dim, b).
    """
    t = params.tensors
    n = spec.n_units
    T = inputs.shape[0]
    out = np.empty((T, spec.state_dim, h0.shape[1]))
    if spec.kind == "lstm":
        h, c = h0[:n], h0[n:]
        for s in range(T):
            x = inputs[s]
            f = expit(t["U_f"] @ h + t["Wx_f"] @ x + t["b_f"])
            i = expit(t["U_i"] @ h + t["Wx_i"] @ x + t["b_i"])
            o = expit(t["U_o"] @ h + t["Wx_o"] @ x + t["b_o"])
            u = np.tanh(t["U_c"] @ h + t["Wx_c"] @ x + t["b_c"])
            c = f * c + i * u
            h = o * np.tanh(c)
            out[s, :n] = h
            out[s, n:] = c
        return out
    h = h0
    for s in range(T):
        if spec.kind == "vanilla_tanh":
            phi = np.tanh(h)
        elif spec.kind == "vanilla_relu":
            phi = np.maximum(h, 0.0)
        else:
            phi = h
        h = t["W"] @ phi + t["V"] @ inputs[s]
        out[s] = h
    return out


def readout(spec: ArchitectureSpec, params: ModelParams,
            states: np.ndarray) -> np.ndarray:
    """Affine readout on the h part of the state; (T, sd, b) -> (T, out, b)."""
    h = states[:, : spec.n_units, :]
    return np.einsum("on,tnb->tob", params["W_out"], h) + params["b_out"][None, :, None]


# -- initializers -------------------------------------------------------------

def init_gaussian(spec: ArchitectureSpec, gain: float, seed: int) -> ModelParams:
    """Gaussian initialization.

    Vanilla kinds: W entries are N(0, gain^2/N), with mean shifted to -0.1
    for the ReLU variant; V entries are N(0, 1). LSTM: each gate weight
    matrix gets its own gain drawn from Unif(0, 1) (times ``gain``), with
    U_f zeroed, b_f drawn from Unif(0, 1), and the remaining biases zero.
    The readout starts at zero. Deterministic under ``seed``.
    """
    if gain < 0:
        raise ValueError("gain must be non-negative")
    rng = np.random.default_rng(seed)
    n, d = spec.n_units, spec.input_dim
    tensors: dict[str, np.ndarray] = {}
    if spec.kind == "lstm":
        # per-gate gains; the forget-gate recurrent weights start at zero
        g_rec = {z: gain * rng.uniform(0.0, 1.0) for z in LSTM_GATES}
        g_rec["f"] = 0.0
        g_in = {z: gain * rng.uniform(0.0, 1.0) for z in LSTM_GATES}
        b = {z: 0.0 for z in LSTM_GATES}
        b["f"] = rng.uniform(0.0, 1.0)
        for z in LSTM_GATES:
            tensors[f"U_{z}"] = rng.standard_normal((n, n)) * (g_rec[z] / np.sqrt(n))
        for z in LSTM_GATES:
            tensors[f"Wx_{z}"] = rng.standard_normal((n, d)) * (g_in[z] / np.sqrt(n))
        for z in LSTM_GATES:
            tensors[f"b_{z}"] = np.asarray(b[z], dtype=float)
    else:
        mean = -0.1 if spec.kind == "vanilla_relu" else 0.0
        tensors["W"] = mean + rng.standard_normal((n, n)) * (gain / np.sqrt(n))
        tensors["V"] = rng.standard_normal((n, d))
    tensors["W_out"] = np.zeros((spec.output_dim, n))
    tensors["b_out"] = np.zeros(spec.output_dim)
    return ModelParams(spec, tensors)


def init_orthogonal(spec: ArchitectureSpec, seed: int) -> ModelParams:
    """Orthogonal recurrent weights (vanilla and linear kinds only)."""
    if spec.kind == "lstm":
        raise ValueError("orthogonal initialization is not defined for lstm")
    rng = np.random.default_rng(seed)
    n = spec.n_units
    q, _ = linalg.qr_positive(rng.standard_normal((n, n)))
    tensors = {
        "W": q,
        "V": rng.standard_normal((n, spec.input_dim)),
        "W_out": np.zeros((spec.output_dim, n)),
        "b_out": np.zeros(spec.output_dim),
    }
    return ModelParams(spec, tensors)


def zeros_like_params(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# -- text serialization -------------------------------------------------------

def write_array_sections(path, magic: str, meta: dict[str, str],
                         tensors: dict[str, np.ndarray]) -> None:
    """Plain-text tensor container: a magic line, key/value header lines,
    then one named section per tensor with row-major decimal floats that
    round-trip float64 exactly."""
    lines = [magic]
    lines += [f"{k} {v}" for k, v in meta.items()]
    for name, t in tensors.items():
        t = np.asarray(t, dtype=float)
        dims = " ".join(str(d) for d in t.shape)
        lines.append(f"tensor {name} {t.ndim}" + (f" {dims}" if t.ndim else ""))
        flat = np.atleast_2d(t) if t.ndim else t.reshape(1, 1)
        for row in flat:
            lines.append(" ".join(_FMT % v for v in np.atleast_1d(row)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_array_sections(path, magic: str):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != magic:
        raise ValueError(f"expected a {magic!r} file")
    meta: dict[str, str] = {}
    idx = 1
    while idx < len(lines) and not lines[idx].startswith("tensor "):
        key, val = lines[idx].split(None, 1)
        meta[key] = val
        idx += 1
    tensors: dict[str, np.ndarray] = {}
    while idx < len(lines):
        parts = lines[idx].split()
        if parts[0] != "tensor":
            raise ValueError(f"unexpected line {idx + 1}")
        name, ndim = parts[1], int(parts[2])
        shape = tuple(int(s) for s in parts[3:])
        if len(shape) != ndim:
            raise ValueError(f"bad tensor header at line {idx + 1}")
        idx += 1
        nrows = shape[0] if ndim >= 2 else 1
        rows = []
        for _ in range(nrows):
            rows.append([float(v) for v in lines[idx].split()])
            idx += 1
        arr = np.asarray(rows, dtype=float)
        tensors[name] = arr.reshape(shape) if ndim else np.asarray(arr[0][0])
    return meta, tensors


def save_params(params: ModelParams, path) -> None:
    """Write parameters to a plain-text file (exact float64 round-trip)."""
    spec = params.spec
    meta = {
        "kind": spec.kind,
        "n_units": str(spec.n_units),
        "input_dim": str(spec.input_dim),
        "output_dim": str(spec.output_dim),
    }
    write_array_sections(path, "flossrnn-params 1", meta, params.tensors)


def load_params(path) -> ModelParams:
    meta, tensors = read_array_sections(path, "flossrnn-params 1")
    spec = ArchitectureSpec(
        kind=meta["kind"],
        n_units=int(meta["n_units"]),
        input_dim=int(meta["input_dim"]),
        output_dim=int(meta["output_dim"]),
    )
    return ModelParams(spec, tensors)
