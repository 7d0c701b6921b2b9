"""Condition-number analysis of long products of one-step Jacobians.

The product of Jacobians over a long horizon is generically so
ill-conditioned that float64 cannot represent its trailing singular values;
the ground-truth computation therefore accumulates the product in software
floating point with a large mantissa (256 bits by default) while the
trajectory itself runs in ordinary precision. The asymptotic estimate

    log kappa_2(T Q) ~ (lambda_1 - lambda_m) * horizon

needs only the Lyapunov exponents from the ordinary-precision forward pass,
so comparing the two quantifies how well the exponents predict conditioning
at finite horizons.

mpmath's precision context is process-global; extended-precision work is
sequential within a process, and parallelism belongs at the seed level.

Rule of thumb for interpreting the numbers: a condition number of 10^p
costs about p decimal digits when solving against the matrix, so log-kappa
divided by ln(10) reads directly as digits lost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from . import linalg, lyapunov, models
from .models import ArchitectureSpec, ModelParams

DEFAULT_PREC_BITS = 256

# sigma_m must stay this many bits above the relative rounding floor
_GUARD_BITS = 10


class PrecisionError(RuntimeError):
    """Requested quantity sits below the configured precision floor."""


@dataclass
class ExtPrecMatrix:
    """Dense matrix of mpmath floats with an attached working precision."""

    rows: int
    cols: int
    data: list  # list of rows, each a list of mpf
    prec_bits: int = DEFAULT_PREC_BITS

    def __post_init__(self):
        if self.prec_bits < 200:
            raise ValueError("extended precision below 200 bits defeats the point")

    @classmethod
    def from_numpy(cls, a: np.ndarray, prec_bits: int = DEFAULT_PREC_BITS):
        a = np.asarray(a, dtype=float)
        data = [[mp.mpf(float(v)) for v in row] for row in a]
        return cls(a.shape[0], a.shape[1], data, prec_bits)

    @classmethod
    def identity(cls, n: int, prec_bits: int = DEFAULT_PREC_BITS):
        data = [[mp.mpf(1) if i == j else mp.mpf(0) for j in range(n)]
                for i in range(n)]
        return cls(n, n, data, prec_bits)

    def matmul(self, other: "ExtPrecMatrix") -> "ExtPrecMatrix":
        if self.cols != other.rows:
            raise ValueError("inner dimensions disagree")
        with mp.workprec(self.prec_bits):
            cols = list(zip(*other.data))
            data = [[mp.fdot(row, col) for col in cols] for row in self.data]
        return ExtPrecMatrix(self.rows, other.cols, data, self.prec_bits)

    def to_numpy(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.data])

    def max_abs(self):
        with mp.workprec(self.prec_bits):
            return max(abs(v) for row in self.data for v in row)


def _lift_left_multiply(jac: np.ndarray, acc: ExtPrecMatrix) -> ExtPrecMatrix:
    return ExtPrecMatrix.from_numpy(jac, acc.prec_bits).matmul(acc)


@dataclass
class ConditionReport:
    seed: int
    horizon: int
    m: int
    log_kappa_direct: float
    log_kappa_estimate: float


def reports_to_csv(path, reports: list[ConditionReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "horizon", "m", "log_kappa_direct",
                    "log_kappa_estimate"])
        for r in reports:
            w.writerow([r.seed, r.horizon, r.m,
                        "%.17g" % r.log_kappa_direct,
                        "%.17g" % r.log_kappa_estimate])


def _trajectory_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0]))


def long_term_jacobian_ext(spec: ArchitectureSpec, params: ModelParams,
                           tau: int, t: int, seed: int,
                           inputs: np.ndarray | None = None,
                           prec_bits: int = DEFAULT_PREC_BITS) -> ExtPrecMatrix:
    """Ordered product of the one-step Jacobians over steps [tau, t).

    The trajectory is simulated in float64 from a seeded random state; only
    the accumulated product is held in extended precision.
    """
    if t <= tau:
        raise ValueError("need t > tau")
    rng = _trajectory_rng(seed)
    if inputs is None:
        inputs = rng.standard_normal((t, spec.input_dim))
    state = models.random_state(spec, rng)
    acc = ExtPrecMatrix.identity(spec.state_dim, prec_bits)
    for s in range(t):
        jac = models.jacobian(spec, params, state, inputs[s])
        state = models.step(spec, params, state, inputs[s])
        if s >= tau:
            acc = _lift_left_multiply(jac, acc)
    return acc


def singular_values_ext(b: ExtPrecMatrix, max_sweeps: int = 60) -> list:
    """One-sided Jacobi singular values of an extended-precision matrix,
    descending mpf values at the matrix's working precision."""
    prec = b.prec_bits
    with mp.workprec(prec):
        cols = [list(col) for col in zip(*b.data)]
        n = len(cols)
        tol = mp.mpf(2) ** (-(prec - 8))
        for _ in range(max_sweeps):
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = mp.fdot(cols[p], cols[p])
                    beta = mp.fdot(cols[q], cols[q])
                    gamma = mp.fdot(cols[p], cols[q])
                    if alpha == 0 or beta == 0 or abs(gamma) <= tol * mp.sqrt(alpha * beta):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2 * gamma)
                    if zeta == 0:
                        tt = mp.mpf(1)
                    else:
                        tt = mp.sign(zeta) / (abs(zeta) + mp.sqrt(1 + zeta * zeta))
                    c = 1 / mp.sqrt(1 + tt * tt)
                    s = c * tt
                    new_p = [c * a - s * bb for a, bb in zip(cols[p], cols[q])]
                    new_q = [s * a + c * bb for a, bb in zip(cols[p], cols[q])]
                    cols[p], cols[q] = new_p, new_q
            if not rotated:
                break
        sv = sorted((mp.sqrt(mp.fdot(col, col)) for col in cols), reverse=True)
    return sv


def condition_direct(m: int, ext_jacobian: ExtPrecMatrix,
                     q_basis: np.ndarray) -> float:
    """log of sigma_1/sigma_m of (T @ Q), computed in extended precision."""
    if q_basis.shape[0] != ext_jacobian.cols or q_basis.shape[1] < m:
        raise ValueError("basis shape incompatible with the product")
    gram = q_basis.T @ q_basis
    if np.abs(gram - np.eye(q_basis.shape[1])).max() > 1e-8:
        raise ValueError("basis must be orthonormal")
    b = ext_jacobian.matmul(ExtPrecMatrix.from_numpy(q_basis,
                                                     ext_jacobian.prec_bits))
    sv = singular_values_ext(b)
    prec = ext_jacobian.prec_bits
    with mp.workprec(prec):
        floor = sv[0] * mp.mpf(2) ** (-(prec - _GUARD_BITS))
        if sv[m - 1] <= floor:
            raise PrecisionError(
                f"sigma_{m} is below the {prec}-bit resolution of the "
                "product; raise the precision or shorten the horizon")
        out = float(mp.log(sv[0]) - mp.log(sv[m - 1]))
    return out


def condition_estimate(exponents: np.ndarray, m: int, horizon: int) -> float:
    """Asymptotic log condition number (lambda_1 - lambda_m) * horizon."""
    exponents = np.asarray(exponents, dtype=float)
    if not 1 <= m <= exponents.size:
        raise ValueError("m out of range")
    return float((exponents[0] - exponents[m - 1]) * horizon)


def usable_dimensions(exponents: np.ndarray, horizon: int,
                      log_kappa_budget: float) -> int:
    """Largest m whose estimated log condition number fits the budget."""
    if log_kappa_budget <= 0:
        raise ValueError("budget must be positive")
    exponents = np.asarray(exponents, dtype=float)
    best = 1
    for m in range(1, exponents.size + 1):
        if condition_estimate(exponents, m, horizon) <= log_kappa_budget:
            best = m
    return best


def condition_scan(spec: ArchitectureSpec, params: ModelParams, tau: int,
                   horizons: list[int], m: int, seed: int,
                   prec_bits: int = DEFAULT_PREC_BITS,
                   inputs: np.ndarray | None = None) -> list[ConditionReport]:
    """Direct vs estimated log condition number along one trajectory.

    Both quantities use the same window and the same initial orthonormal
    basis: the direct value from the extended-precision product applied to
    the basis, the estimate from the ordinary Benettin accumulation run
    alongside.
    """
    horizons = sorted(horizons)
    t_end = tau + horizons[-1]
    rng = _trajectory_rng(seed)
    if inputs is None:
        inputs = rng.standard_normal((t_end, spec.input_dim))
    state = models.random_state(spec, rng)
    for s in range(tau):
        state = models.step(spec, params, state, inputs[s])
    q0 = lyapunov.random_orthonormal(spec.state_dim, m, rng)
    acc = ExtPrecMatrix.identity(spec.state_dim, prec_bits)
    basis = q0.copy()
    gamma = np.zeros(m)
    out = []
    hset = set(horizons)
    for h in range(1, horizons[-1] + 1):
        x = inputs[tau + h - 1]
        jac = models.jacobian(spec, params, state, x)
        state = models.step(spec, params, state, x)
        acc = _lift_left_multiply(jac, acc)
        basis = jac @ basis
        q, r = linalg.qr_positive(basis)
        gamma += np.log(np.diagonal(r))
        basis = q
        if h in hset:
            direct = condition_direct(m, acc, q0)
            estimate = condition_estimate(gamma / h, m, h)
            out.append(ConditionReport(seed, h, m, direct, estimate))
    return out


def condition_direct_qr(spec: ArchitectureSpec, params: ModelParams, tau: int,
                        horizon: int, m: int, seed: int,
                        prec_bits: int = DEFAULT_PREC_BITS,
                        reorth_every: int = 5,
                        inputs: np.ndarray | None = None) -> float:
    """log sigma_1/sigma_m via extended-precision Gram-Schmidt accumulation,
    an algorithm independent of the Jacobi route in condition_direct."""
    t_end = tau + horizon
    rng = _trajectory_rng(seed)
    if inputs is None:
        inputs = rng.standard_normal((t_end, spec.input_dim))
    state = models.random_state(spec, rng)
    for s in range(tau):
        state = models.step(spec, params, state, inputs[s])
    q0 = lyapunov.random_orthonormal(spec.state_dim, m, rng)
    with mp.workprec(prec_bits):
        cols = [[mp.mpf(float(v)) for v in q0[:, j]] for j in range(m)]
        log_first = mp.mpf(0)
        log_last = mp.mpf(0)
        for h in range(1, horizon + 1):
            x = inputs[tau + h - 1]
            jac = models.jacobian(spec, params, state, x)
            state = models.step(spec, params, state, x)
            jrows = [[mp.mpf(float(v)) for v in row] for row in jac]
            cols = [[mp.fdot(row, col) for row in jrows] for col in cols]
            if h % reorth_every == 0 or h == horizon:
                for j in range(m):
                    for i in range(j):
                        proj = mp.fdot(cols[j], cols[i])
                        cols[j] = [a - proj * b for a, b in zip(cols[j], cols[i])]
                    norm = mp.sqrt(mp.fdot(cols[j], cols[j]))
                    if norm == 0:
                        raise PrecisionError("basis column vanished")
                    cols[j] = [a / norm for a in cols[j]]
                    if j == 0:
                        log_first += mp.log(norm)
                    if j == m - 1:
                        log_last += mp.log(norm)
        return float(log_first - log_last)
