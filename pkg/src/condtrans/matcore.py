"""Dense linear-algebra kernel.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Everything
here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .exceptions import DimensionError, NumericalError

__all__ = [
    "SvdTriplet",
    "as_square",
    "svd",
    "polar_orthogonal_factor",
    "condition_number",
    "hard_threshold_column",
    "hard_threshold",
    "dct_matrix",
    "dct_kron_init",
]


class SvdTriplet(NamedTuple):
    """``m = u @ diag(sigma) @ v.T`` with sigma sorted nonincreasing."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_square(m, name="m"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains non-finite entries")
    return m


def svd(m):
    """Full SVD of a square matrix.

    Singular values come back nonnegative and nonincreasing; any sign is
    carried by ``u``. Falls back to the slower ``gesvd`` driver if the
    divide-and-conquer one does not converge.
    """
    m = as_square(m)
    try:
        u, s, vt = linalg.svd(m, lapack_driver="gesdd", check_finite=False)
    except linalg.LinAlgError:
        try:
            u, s, vt = linalg.svd(m, lapack_driver="gesvd", check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError(
                f"SVD did not converge (||m||_F = {np.linalg.norm(m):.6g})"
            ) from exc
    return SvdTriplet(u, s, vt.T)


def polar_orthogonal_factor(m):
    """Orthogonal polar factor ``P @ R.T`` of ``m = P S R.T``.

    This is the maximizer of ``trace(Q.T @ m)`` over orthogonal ``Q``, so
    it solves the orthogonal Procrustes problem. For rank-deficient input
    the maximizer is not unique and whichever completion LAPACK picks is
    returned.
    """
    p, _, r = svd(m)
    return p @ r.T


def condition_number(m):
    """``sigma_max / sigma_min``; ``inf`` for a singular matrix."""
    s = linalg.svdvals(as_square(m), check_finite=False)
    if s[-1] == 0.0:
        return math.inf
    return float(s[0] / s[-1])


def hard_threshold_column(x, s):
    """Keep the ``s`` largest-magnitude entries of ``x``.

    Ties in magnitude are resolved in favour of the lower index. ``s`` larger
    than ``len(x)`` is clamped.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("x must be a vector")
    return hard_threshold(x[:, None], s)[:, 0]


def hard_threshold(m, s):
    """Column-wise hard thresholding.

    Parameters
    ----------
    m : ndarray of shape (n, k)
    s : int or array of int, shape (k,)
        Number of entries kept per column; a scalar applies to all columns.

    Returns
    -------
    ndarray of shape (n, k)
        ``m`` with all but the ``s`` largest-magnitude entries of each
        column set to zero (lowest row index wins ties).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError("m must be a 2-D array")
    n, k = m.shape
    s_arr = np.asarray(s)
    if np.any(s_arr < 0):
        raise ValueError("sparsity must be nonnegative")
    s_arr = np.minimum(s_arr.astype(np.int64), n)
    if n == 0 or k == 0:
        return m.copy()

    mag = np.abs(m)
    if s_arr.ndim == 0:
        s0 = int(s_arr)
        if s0 == 0:
            return np.zeros_like(m)
        if s0 == n:
            return m.copy()
        thr = np.partition(mag, n - s0, axis=0)[n - s0]
        s_col = np.full(k, s0)
    else:
        if s_arr.shape != (k,):
            raise DimensionError(f"per-column sparsity must have shape ({k},)")
        s_col = s_arr
        srt = np.sort(mag, axis=0)
        row = np.clip(n - s_col, 0, n - 1)
        thr = np.take_along_axis(srt, row[None, :], axis=0)[0]
        # s == 0 keeps nothing
        thr = np.where(s_col == 0, np.inf, thr)

    above = mag > thr
    need = s_col - above.sum(axis=0)
    tied = mag == thr
    keep = above | (tied & (np.cumsum(tied, axis=0) <= need))
    return np.where(keep, m, 0.0)


def dct_matrix(p):
    """Orthonormal DCT-II matrix of size ``p``; row ``k`` is frequency ``k``."""
    k = np.arange(p)[:, None]
    j = np.arange(p)[None, :]
    d = np.cos(np.pi * (2 * j + 1) * k / (2 * p))
    d[0] *= math.sqrt(1.0 / p)
    d[1:] *= math.sqrt(2.0 / p)
    return d


def dct_kron_init(n):
    """Separable 2-D DCT ``D kron D`` acting on vectorized ``sqrt(n) x sqrt(n)`` patches."""
    p = math.isqrt(int(n))
    if n < 1 or p * p != n:
        raise ValueError(f"n must be a perfect square, got {n}")
    d = dct_matrix(p)
    return np.kron(d, d)
