"""Cholesky helpers with a jitter ladder and incremental row appends."""

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from csgp.errors import NotPositiveDefinite

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def jitter_cholesky(K, ladder=JITTER_LADDER):
    """Lower Cholesky factor of ``K``, adding relative diagonal jitter on failure.

    Jitter is scaled by the mean diagonal. Returns ``(L, jitter_used)``.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale):
        raise NotPositiveDefinite("matrix has non-finite diagonal")
    scale = max(scale, 1e-300)
    for rel in ladder:
        jitter = rel * scale
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jitter
    raise NotPositiveDefinite(
        f"Cholesky failed for {n}x{n} matrix with jitter up to {ladder[-1]:g} x mean diagonal"
    )


def chol_solve(L, b):
    return cho_solve((L, True), b, check_finite=False)


def tri_solve(L, b):
    return solve_triangular(L, b, lower=True, check_finite=False)


def chol_logdet(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def cholesky_append(L, K_cross, K_new):
    """Extend the factor of ``A`` to the factor of ``[[A, K_cross], [K_cross.T, K_new]]``.

    ``K_cross`` has shape (n, m) and ``K_new`` (m, m). Falls back to the jitter
    ladder on the new diagonal block only.
    """
    n = L.shape[0]
    m = K_new.shape[0]
    if n == 0:
        return jitter_cholesky(K_new)[0]
    B = tri_solve(L, K_cross)
    S = K_new - B.T @ B
    S = 0.5 * (S + S.T)
    C, _ = jitter_cholesky(S)
    out = np.zeros((n + m, n + m))
    out[:n, :n] = L
    out[n:, :n] = B.T
    out[n:, n:] = C
    return out


def psd_sqrt(C):
    """Symmetric square root factor ``R`` with ``R @ R.T ~= C`` (negative eigenvalues clipped)."""
    C = 0.5 * (np.asarray(C, dtype=float) + np.asarray(C, dtype=float).T)
    w, V = np.linalg.eigh(C)
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)
