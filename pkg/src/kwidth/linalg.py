"""Small numerical helpers shared by the solver and the filters."""

from __future__ import annotations

import numpy as np


def _start_vector(n: int) -> np.ndarray:
    # fixed, non-degenerate start; avoids being orthogonal to sparse eigenvectors
    v = 1.0 + 0.1 * np.sin(np.arange(1, n + 1))
    return v / np.linalg.norm(v)


def op_norm_sym(M: np.ndarray, rtol: float = 1e-8, max_iter: int = 2000) -> tuple[float, np.ndarray]:
    """Operator norm of a symmetric matrix and a unit vector attaining it.

    Power iteration on ``M`` from a deterministic start vector; stops when
    the Rayleigh quotient of ``M^2`` changes by less than ``rtol``. Falls back
    to a dense eigendecomposition if the iteration has not settled (tiny
    spectral gap or ``+lambda / -lambda`` ties).
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return 0.0, np.zeros(0)
    v = _start_vector(n)
    prev = -1.0
    for _ in range(max_iter):
        w = M @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0, v
        v = w / nrm
        if abs(nrm - prev) <= rtol * nrm:
            # sign-stable eigenvector: one more step to resolve +/- oscillation
            lam = float(v @ M @ v)
            if abs(abs(lam) - nrm) <= 1e-6 * nrm:
                return abs(lam), v
            break
        prev = nrm
    evals, evecs = np.linalg.eigh(M)
    i = int(np.argmax(np.abs(evals)))
    return float(abs(evals[i])), evecs[:, i]
