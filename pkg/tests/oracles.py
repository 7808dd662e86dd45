"""Hand-rolled reference computations used to cross-check production code.

Everything here is deliberately naive (loops, no library solvers beyond
eigendecomposition for constructions) so that agreement with the production
paths is meaningful.
"""

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += a[i, l] * b[l, j]
            out[i, j] = s
    return out


def naive_frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Entry-by-entry Frobenius inner product."""
    assert a.shape == b.shape
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * b[i, j]
    return s


def psd_with_spectrum(rng: np.random.Generator, eigvals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric PSD matrix with the given spectrum; returns (C, U)."""
    d = len(eigvals)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    c = (q * eigvals) @ q.T
    return (c + c.T) / 2.0, q


def exact_projector(rng: np.random.Generator, d: int, null_dim: int) -> np.ndarray:
    """Exactly idempotent rank-null_dim orthogonal projector."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    u = q[:, :null_dim]
    p = u @ u.T
    return (p + p.T) / 2.0
