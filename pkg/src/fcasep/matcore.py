"""Small dense complex linear algebra for Hermitian positive-definite matrices.

All estimators in this package work on matrices of order I in {1..8}
(microphone count). Single-matrix helpers validate their inputs and raise
typed errors; the ``counted_*`` batched kernels are the only routines the
estimators use on their hot paths, and they tally every order-I inversion
and matrix-matrix product they execute into an ``OpCounters``.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite

# Hard cap on the matrix order handled by this package.
MAX_ORDER = 8

# A Cholesky pivot at or below this fraction of the largest diagonal entry
# counts as numerically non-PD.
PIVOT_RTOL = 1e-13

LOG_PI = math.log(math.pi)


def _check_square(m: np.ndarray) -> int:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    order = m.shape[0]
    if not 1 <= order <= MAX_ORDER:
        raise DimensionMismatch(f"matrix order {order} outside 1..{MAX_ORDER}")
    return order


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return the Hermitian matrix built from the lower triangle of ``a``.

    The upper triangle is the conjugate mirror of the lower one and the
    diagonal is forced real, so ``out[i, l] == conj(out[l, i])`` holds
    exactly, not approximately. Works on stacks ``(..., I, I)``.
    """
    a = np.asarray(a)
    lower = np.tril(a, -1)
    out = lower + np.conj(np.swapaxes(lower, -1, -2))
    diag = np.einsum("...ii->...i", np.asarray(a)).real
    np.einsum("...ii->...i", out)[...] = diag
    return out


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L^H == m for Hermitian PD ``m``.

    Raises NotPositiveDefinite when a pivot is non-finite or does not
    exceed PIVOT_RTOL times the largest diagonal entry.
    """
    _check_square(m)
    m = np.asarray(m, dtype=np.complex128)
    if not np.isfinite(m).all():
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    pivots = np.diagonal(low).real ** 2
    if not (pivots > PIVOT_RTOL * np.diagonal(m).real.max()).all():
        raise NotPositiveDefinite("pivot below threshold")
    return low


def invert_pd(m: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian PD matrix, returned exactly Hermitian."""
    low = cholesky(m)
    low_inv = scipy.linalg.solve_triangular(
        low, np.eye(low.shape[0], dtype=np.complex128), lower=True
    )
    return hermitize(low_inv.conj().T @ low_inv)


def logdet_pd(m: np.ndarray) -> float:
    """ln det(m) for Hermitian PD ``m``, via the Cholesky factor."""
    low = cholesky(m)
    return float(2.0 * np.log(np.diagonal(low).real).sum())


def gaussian_logpdf(y: np.ndarray, r: np.ndarray) -> float:
    """Log density of the circularly-symmetric complex Gaussian N(0, r) at y.

    ln p(y) = -I ln(pi) - ln det(r) - y^H r^{-1} y.
    """
    y = np.asarray(y, dtype=np.complex128)
    order = _check_square(r)
    if y.shape != (order,):
        raise DimensionMismatch(f"vector shape {y.shape} vs matrix order {order}")
    low = cholesky(r)
    logdet = 2.0 * np.log(np.diagonal(low).real).sum()
    z = scipy.linalg.solve_triangular(low, y, lower=True)
    quad = float(np.vdot(z, z).real)
    return float(-order * LOG_PI - logdet - quad)


# ---------------------------------------------------------------------------
# Counted batched kernels (hot path of the estimators).
#
# What is tallied follows the estimators' operation accounting: an
# "inversion" is one inverse of an order-I matrix, a "matmul" one product of
# two I-by-I matrices. Matrix-vector products, outer-product accumulations
# and everything acting on diagonal matrices stay uncounted because their
# cost is O(I) or O(I^2), not O(I^3). Likelihood diagnostics never go
# through these kernels.
# ---------------------------------------------------------------------------


def counted_inv(m: np.ndarray, counters=None) -> np.ndarray:
    """Batched inverse of a stack (..., I, I), counting one inversion each.

    Nothing is counted when the inversion raises.
    """
    m = np.asarray(m)
    out = np.linalg.inv(m)
    if counters is not None:
        counters.add_inversions(int(np.prod(m.shape[:-2], dtype=np.int64)))
    return out


def counted_matmul(a: np.ndarray, b: np.ndarray, counters=None) -> np.ndarray:
    """Batched product of I-by-I stacks, counting one matmul per pair."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != a.shape[-2] or b.shape[-1] != b.shape[-2]:
        raise DimensionMismatch("counted_matmul expects square matrix stacks")
    if counters is not None:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        counters.add_matmuls(int(np.prod(batch, dtype=np.int64)))
    return a @ b
