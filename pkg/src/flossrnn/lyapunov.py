"""Lyapunov spectrum estimation along driven recurrent-network trajectories.

The first k exponents are measured by evolving an orthonormal tangent basis
with the one-step Jacobians and periodically reorthonormalizing it by QR;
the accumulated logs of the R diagonal, divided by the number of steps, give
the exponents in nats per step.

An initial transient is discarded so that the trajectory settles and the
basis aligns; during the transient the basis is propagated and QR'd without
accumulating growth. Exponents are reported in the order the procedure
produces them (asymptotically descending); use ``inversion_count`` to see
whether a finite run produced any order inversions instead of silently
sorting them away.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import linalg, models
from .models import ArchitectureSpec, ModelParams

# Largest tolerated R[0,0]/R[k-1,k-1] before the basis is declared
# ill-conditioned (the reorthonormalization interval is too long).
CONDITION_LIMIT = 1e12


class TangentConditionError(RuntimeError):
    """Propagated basis became ill-conditioned; shrink t_ons."""


class DivergedError(RuntimeError):
    """Network state left the finite range."""


@dataclass
class TangentBasis:
    """Orthonormal system q plus running log-growth accumulators."""

    q: np.ndarray
    gamma: np.ndarray
    steps_accumulated: int = 0


@dataclass
class LyapunovEstimate:
    exponents: np.ndarray  # nats per step, procedure order
    t_sim: int
    t_ons: int

    def inversion_count(self) -> int:
        return int(np.sum(np.diff(self.exponents) > 0))


def propagate_tangent(basis: TangentBasis, jac: np.ndarray) -> TangentBasis:
    """Push the basis through one step; no normalization is performed."""
    return TangentBasis(jac @ basis.q, basis.gamma, basis.steps_accumulated)


def reorthonormalize(basis: TangentBasis) -> TangentBasis:
    """QR the basis, add log diag(R) to the growth accumulators."""
    q, r = linalg.qr_positive(basis.q)
    d = np.diagonal(r)
    if d[0] / d[-1] > CONDITION_LIMIT:
        raise TangentConditionError(
            f"R[0,0]/R[k,k] = {d[0] / d[-1]:.3e} exceeds {CONDITION_LIMIT:g}; "
            "reorthonormalize more often (reduce t_ons)"
        )
    return TangentBasis(q, basis.gamma + np.log(d), basis.steps_accumulated)


def random_orthonormal(dim: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # Draw a full square factor and slice: the leading columns of the basis
    # are then identical for every k, which keeps runs with different k on
    # nested subspaces (and leaves the rng in the same state).
    q, _ = linalg.qr_positive(rng.standard_normal((dim, dim)))
    return q[:, :k].copy()


def gaussian_inputs(n_steps: int, input_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n_steps, input_dim))


def _checkpoint_steps(t_sim: int, t_ons: int, n_points: int) -> list[int]:
    """Roughly log-spaced multiples of t_ons, always ending at t_sim."""
    raw = np.unique(np.geomspace(t_ons, t_sim, n_points).astype(int))
    pts = sorted({min(t_sim, max(t_ons, int(round(p / t_ons)) * t_ons)) for p in raw})
    if pts[-1] != t_sim:
        pts.append(t_sim)
    return pts


def _run(spec: ArchitectureSpec, params: ModelParams, k: int, t_sim: int,
         t_ons: int, t_transient: int, seed: int,
         inputs: np.ndarray | None, checkpoints: list[int] | None):
    if not 1 <= k <= spec.state_dim:
        raise ValueError("k must lie in [1, state_dim]")
    if t_ons < 1 or t_sim < 1:
        raise ValueError("t_ons and t_sim must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A]))
    total = t_transient + t_sim
    if inputs is None:
        inputs = gaussian_inputs(total, spec.input_dim, rng)
    elif inputs.shape[0] < total:
        raise ValueError(f"need {total} input steps, got {inputs.shape[0]}")
    state = models.random_state(spec, rng)
    q = random_orthonormal(spec.state_dim, k, rng)
    basis = TangentBasis(q, np.zeros(k))

    # transient: settle the trajectory and align the basis, no accumulation
    for t in range(t_transient):
        jac = models.jacobian(spec, params, state, inputs[t])
        state = models.step(spec, params, state, inputs[t])
        basis = propagate_tangent(basis, jac)
        if (t + 1) % t_ons == 0:
            q, _ = linalg.qr_positive(basis.q)
            basis = TangentBasis(q, basis.gamma)
    q, _ = linalg.qr_positive(basis.q)
    basis = TangentBasis(q, np.zeros(k))

    trace: list[tuple[int, np.ndarray]] = []
    want = set(checkpoints or [])
    for t in range(t_sim):
        step_idx = t_transient + t
        jac = models.jacobian(spec, params, state, inputs[step_idx])
        state = models.step(spec, params, state, inputs[step_idx])
        if not np.all(np.isfinite(state.as_vector())):
            raise DivergedError(f"state non-finite at accumulation step {t + 1}")
        basis = propagate_tangent(basis, jac)
        if (t + 1) % t_ons == 0 or t + 1 == t_sim:
            basis = reorthonormalize(basis)
            basis.steps_accumulated = t + 1
            if (t + 1) in want:
                trace.append((t + 1, basis.gamma / (t + 1)))
    return LyapunovEstimate(basis.gamma / t_sim, t_sim, t_ons), trace


def lyapunov_spectrum(spec: ArchitectureSpec, params: ModelParams, k: int,
                      t_sim: int, t_ons: int = 1, t_transient: int = 500,
                      seed: int = 0, inputs: np.ndarray | None = None) -> LyapunovEstimate:
    """First k Lyapunov exponents of the driven dynamics, nats per step.

    The default input stream is i.i.d. standard Gaussian, deterministic
    under ``seed``; pass ``inputs`` of shape (t_transient + t_sim, input_dim)
    to drive the network with anything else.
    """
    est, _ = _run(spec, params, k, t_sim, t_ons, t_transient, seed, inputs, None)
    return est


def convergence_trace(spec: ArchitectureSpec, params: ModelParams, k: int,
                      t_sim: int, t_ons: int = 1, t_transient: int = 500,
                      seed: int = 0, inputs: np.ndarray | None = None,
                      n_checkpoints: int = 20):
    """Running estimates gamma_i / t at log-spaced checkpoints.

    Returns (checkpoints, estimate): a list of (t, exponents-so-far) pairs
    whose last entry equals the full-run estimate exactly, plus the estimate.
    """
    pts = _checkpoint_steps(t_sim, t_ons, n_checkpoints)
    est, trace = _run(spec, params, k, t_sim, t_ons, t_transient, seed, inputs, pts)
    return trace, est


def spectrum_to_csv(path, estimates: dict[int, LyapunovEstimate]) -> None:
    """Rows (realization, i, lambda_i) for a set of realizations."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["realization", "i", "lambda_i"])
        for real, est in sorted(estimates.items()):
            for i, lam in enumerate(est.exponents, start=1):
                w.writerow([real, i, "%.17g" % lam])


def trace_to_csv(path, traces: dict[int, list]) -> None:
    """Rows (realization, t, i, lambda_i_running)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["realization", "t", "i", "lambda_i_running"])
        for real, trace in sorted(traces.items()):
            for t, lams in trace:
                for i, lam in enumerate(lams, start=1):
                    w.writerow([real, t, i, "%.17g" % lam])
