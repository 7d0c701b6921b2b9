"""Dense real matrix kernels used throughout the package.

Provides a QR factorization with a positive-diagonal convention (which makes
the decomposition unique and smooth for full-rank input), the ``copyltu``
symmetrizer, the analytic pullback of the QR factorization for reverse-mode
differentiation, and a one-sided Jacobi singular value routine.

All functions operate on plain ``numpy`` arrays of float64 and are pure: no
shared mutable state, safe to call from any number of threads or processes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import get_lapack_funcs

_GEQRF, _ORGQR, _TRTRS = get_lapack_funcs(
    ("geqrf", "orgqr", "trtrs"), (np.empty((1, 1), dtype=float),))

# Relative tolerance below which a diagonal entry of R signals rank collapse.
RANK_TOL = 1e-12

# Absolute tolerance below which R cannot be solved against.
SINGULAR_TOL = 1e-300


class RankCollapseError(RuntimeError):
    """A column of the factored matrix collapsed below tolerance.

    During tangent-space propagation this typically means too many steps were
    taken between reorthonormalizations.
    """


class SingularTriangularError(RuntimeError):
    """R has a diagonal entry too small to solve against."""


class QRFactors(NamedTuple):
    q: np.ndarray
    r: np.ndarray


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")


def qr_positive(a: np.ndarray) -> QRFactors:
    """Reduced QR factorization with strictly positive diagonal of R.

    Householder reflections (LAPACK) followed by a diagonal sign fix: column i
    of Q and row i of R are negated wherever R[i, i] < 0. The result is the
    unique factorization a = q @ r with orthonormal q and upper-triangular r
    whose diagonal is positive.

    Parameters
    ----------
    a : array, shape (..., n, k) with n >= k
        Matrix (or stack of matrices) of full column rank.

    Returns
    -------
    QRFactors
        q of shape (..., n, k), r of shape (..., k, k).

    Raises
    ------
    RankCollapseError
        If any |R[i, i]| falls below RANK_TOL times the largest diagonal
        magnitude (numerically rank deficient input).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2:
        raise ValueError("qr_positive expects a matrix")
    n, k = a.shape[-2:]
    if n < k:
        raise ValueError(f"qr_positive needs rows >= cols, got {n}x{k}")
    _require_finite(a, "qr_positive input")
    if a.ndim == 2:
        # direct LAPACK path; this runs once per propagation step in the
        # hot loops, so wrapper overhead matters
        qr_raw, tau, _, info = _GEQRF(a, overwrite_a=False)
        if info != 0:
            raise RankCollapseError("factorization failed")
        r = np.triu(qr_raw[:k])
        q, _, info = _ORGQR(qr_raw[:, :k], tau)
        if info != 0:
            raise RankCollapseError("orthonormalization failed")
    else:
        q, r = np.linalg.qr(a)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    dmag = np.abs(d)
    dmax = dmag.max(axis=-1)
    if np.any(dmax == 0.0) or np.any(dmag.min(axis=-1) <= RANK_TOL * dmax):
        raise RankCollapseError(
            "column norm collapsed below tolerance during factorization; "
            "reduce the number of propagation steps between "
            "reorthonormalizations"
        )
    s = np.where(d < 0.0, -1.0, 1.0)
    q = q * s[..., None, :]
    r = r * s[..., :, None]
    return QRFactors(q, r)


def copyltu(m: np.ndarray) -> np.ndarray:
    """Symmetrize by mirroring the lower triangle onto the upper.

    out[i, j] = m[max(i, j), min(i, j)]. The diagonal is kept.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError("copyltu expects a square matrix")
    lower = np.tril(m)
    return lower + np.swapaxes(np.tril(m, -1), -1, -2)


def qr_pullback(
    q: np.ndarray,
    r: np.ndarray,
    q_bar: np.ndarray | None = None,
    r_bar: np.ndarray | None = None,
) -> np.ndarray:
    """Adjoint of the matrix that was factored as q @ r.

    Given the factors of a = q @ r (positive-diagonal convention) and the
    adjoints of a scalar loss with respect to q and r, returns the adjoint
    with respect to a:

        a_bar = (q_bar + q @ copyltu(M)) @ r^{-T},
        M = r @ r_bar^T - q_bar^T @ q.

    The application of r^{-T} is carried out by triangular back-substitution,
    never by explicit inversion. Missing adjoints are treated as zero.
    """
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n, k = q.shape
    if r.shape != (k, k):
        raise ValueError("factor shapes are inconsistent")
    d = np.abs(np.diagonal(r))
    if d.min() < SINGULAR_TOL:
        raise SingularTriangularError(
            f"R diagonal entry {d.min():.3e} below {SINGULAR_TOL:g}"
        )
    if q_bar is None and r_bar is None:
        return np.zeros_like(q)
    m = np.zeros((k, k))
    if r_bar is not None:
        m += r @ np.asarray(r_bar, dtype=float).T
    b = np.zeros_like(q)
    if q_bar is not None:
        q_bar = np.asarray(q_bar, dtype=float)
        m -= q_bar.T @ q
        b = b + q_bar
    b = b + q @ copyltu(m)
    # a_bar = b @ r^{-T}  <=>  r @ a_bar^T = b^T
    x, info = _TRTRS(r, b.T, lower=0, trans=0, unitdiag=0)
    if info != 0:
        raise SingularTriangularError(f"triangular solve failed (info={info})")
    return x.T


def _round_robin_pairs(n: int):
    """Disjoint column pairings covering every pair once in n - 1 rounds
    (circle scheduling; n must be even)."""
    half = n // 2
    for r in range(n - 1):
        others = [(i + r) % (n - 1) + 1 for i in range(n - 1)]
        arr = [0] + others
        yield np.array(arr[:half]), np.array(arr[half:][::-1])


def singular_values(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Singular values of a dense real matrix, descending.

    One-sided Jacobi iteration on the columns (of the transpose when the
    input is wide), with a parallel round-robin ordering so each round
    rotates a batch of disjoint pairs at once. Sweeps stop when every pair
    has normalized inner product below ``tol`` or after ``max_sweeps``.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2:
        raise ValueError("singular_values expects a matrix")
    _require_finite(a, "singular_values input")
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    n_orig = a.shape[1]
    if n_orig == 0:
        return np.zeros(0)
    if n_orig == 1:
        return np.array([np.linalg.norm(a[:, 0])])
    if a.shape[1] % 2:
        a = np.hstack([a, np.zeros((a.shape[0], 1))])
    n = a.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for ps, qs in _round_robin_pairs(n):
            ap = a[:, ps]
            aq = a[:, qs]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            live = (alpha > 0.0) & (beta > 0.0)
            need = live & (np.abs(gamma) > tol * np.sqrt(alpha * beta, where=live,
                                                         out=np.zeros(len(ps))))
            if not need.any():
                continue
            rotated = True
            zeta = np.zeros(len(ps))
            np.divide(beta - alpha, 2.0 * gamma, where=need, out=zeta)
            t = np.where(zeta == 0.0, 1.0,
                         np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta)))
            c = 1.0 / np.hypot(1.0, t)
            s = c * t
            c = np.where(need, c, 1.0)
            s = np.where(need, s, 0.0)
            a[:, ps] = c * ap - s * aq
            a[:, qs] = s * ap + c * aq
        if not rotated:
            break
    sv = np.sqrt(np.sum(a * a, axis=0))
    sv.sort()
    return sv[::-1][:n_orig].copy()
