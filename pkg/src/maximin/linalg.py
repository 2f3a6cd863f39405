"""Dense symmetric linear algebra helpers.

Covers the small amount of matrix machinery the estimators rely on:
lower-triangle vectorization with the index map ``pi_index``, projection
onto the positive semi-definite cone by eigenvalue clamping, symmetric
matrix square roots, and multivariate Gaussian sampling from an
:class:`~maximin.rng.RngStream`.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream

__all__ = [
    "pi_index",
    "vecl",
    "unvecl",
    "psd_project",
    "sym_sqrt",
    "mvn_sample",
]


def _check_square_symmetric(A: np.ndarray, tol: float = 0.0) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if tol == 0.0:
        if not np.array_equal(A, A.T):
            # Accept tiny asymmetries from accumulation error, reject real ones.
            scale = max(1.0, float(np.abs(A).max()))
            if np.abs(A - A.T).max() > 1e-12 * scale:
                raise ValueError("matrix is not symmetric")
            A = 0.5 * (A + A.T)
    return A


def pi_index(l: int, k: int, L: int) -> int:
    """Map a lower-triangle position ``(l, k)`` to its linear index.

    Uses the 1-based bijection ``(2L - k)(k - 1)/2 + l`` from the pairs
    ``{(l, k): 1 <= k <= l <= L}`` onto ``{1, ..., L(L+1)/2}``.

    Parameters
    ----------
    l, k : int
        Row and column (1-based) with ``k <= l``.
    L : int
        Matrix dimension.
    """
    if not (1 <= k <= l <= L):
        raise ValueError(f"require 1 <= k <= l <= L, got (l={l}, k={k}, L={L})")
    return (2 * L - k) * (k - 1) // 2 + l


def lower_triangle_pairs(L: int) -> list[tuple[int, int]]:
    """All 1-based pairs ``(l, k)`` with ``k <= l``, ordered by ``pi_index``."""
    return [(l, k) for k in range(1, L + 1) for l in range(k, L + 1)]


def vecl(A: np.ndarray) -> np.ndarray:
    """Stack the columns of the lower triangle of a symmetric matrix.

    The entry ``vecl(A)[pi_index(l, k, L) - 1]`` equals ``A[l-1, k-1]``.
    """
    A = _check_square_symmetric(A)
    L = A.shape[0]
    out = np.empty(L * (L + 1) // 2)
    pos = 0
    for k in range(L):
        m = L - k
        out[pos:pos + m] = A[k:, k]
        pos += m
    return out


def unvecl(v: np.ndarray, L: int | None = None) -> np.ndarray:
    """Inverse of :func:`vecl`; rebuilds the full symmetric matrix."""
    v = np.asarray(v, dtype=float).ravel()
    if L is None:
        L = int((np.sqrt(8 * v.size + 1) - 1) / 2 + 0.5)
    if v.size != L * (L + 1) // 2:
        raise ValueError(f"length {v.size} is not L(L+1)/2 for L={L}")
    A = np.zeros((L, L))
    pos = 0
    for k in range(L):
        m = L - k
        A[k:, k] = v[pos:pos + m]
        A[k, k:] = v[pos:pos + m]
        pos += m
    return A


def psd_project(A: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone.

    Eigen-decomposes ``A = U diag(lam) U^T`` and clamps every negative
    eigenvalue to zero.  The clamp threshold is exactly zero (no relative
    cutoff), which is what makes the projection a Frobenius contraction
    toward any PSD matrix.
    """
    A = _check_square_symmetric(A)
    lam, U = np.linalg.eigh(A)
    if lam[0] >= 0.0:
        return A
    lam = np.clip(lam, 0.0, None)
    out = (U * lam) @ U.T
    return 0.5 * (out + out.T)


def sym_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric square root ``U diag(sqrt(lam_+)) U^T`` of a PSD matrix.

    Negative eigenvalues within roundoff of zero are clamped, so inputs
    that are PSD only up to numerical error are handled without failure.
    """
    A = _check_square_symmetric(A)
    lam, U = np.linalg.eigh(A)
    floor = -1e-10 * max(1.0, float(np.abs(lam).max()))
    if lam[0] < floor:
        raise ValueError(f"matrix is not PSD (min eigenvalue {lam[0]:.3e})")
    lam = np.clip(lam, 0.0, None)
    out = (U * np.sqrt(lam)) @ U.T
    return 0.5 * (out + out.T)


def mvn_sample(
    mean: np.ndarray,
    cov: np.ndarray,
    rng: RngStream,
    size: int | None = None,
) -> np.ndarray:
    """Draw from N(mean, cov) using the eigen square root of ``cov``.

    The eigen root (rather than Cholesky) keeps PSD-but-singular
    covariances, e.g. clamped matrices, sampleable.  Output is a vector
    when ``size`` is None and a ``(size, d)`` array otherwise; fixed
    ``rng`` gives bitwise-identical output.
    """
    mean = np.asarray(mean, dtype=float).ravel()
    C = sym_sqrt(cov)
    if C.shape[0] != mean.size:
        raise ValueError(
            f"dimension mismatch: mean has {mean.size}, cov has {C.shape[0]}"
        )
    g = rng.generator()
    if size is None:
        z = g.standard_normal(mean.size)
        return mean + C @ z
    z = g.standard_normal((int(size), mean.size))
    return mean[None, :] + z @ C.T
