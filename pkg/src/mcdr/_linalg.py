"""Dense symmetric linear-algebra kernels shared by all solvers.

Everything here is deterministic for identical inputs: eigenvector order and
signs are normalized so that sweeps and reports reproduce bit-for-bit.
"""

from __future__ import annotations

import numpy as np

SQRT2 = float(np.sqrt(2.0))


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def check_symmetric(M: np.ndarray, rel_tol: float = 1e-10) -> None:
    """Raise if M deviates from symmetry by more than rel_tol * max|entry|."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.abs(M).max()) if M.size else 1.0)
    dev = float(np.abs(M - M.T).max()) if M.size else 0.0
    if dev > rel_tol * scale:
        raise ValueError(f"matrix is not symmetric: max asymmetry {dev:.3e}")


def eigh_desc(M: np.ndarray, tie_tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix with eigenvalues descending.

    Ties are resolved deterministically: each eigenvector's first coordinate
    of non-negligible magnitude is made positive, and blocks of equal
    eigenvalues are ordered lexicographically by eigenvector entries.
    """
    w, V = np.linalg.eigh(sym(np.asarray(M, dtype=float)))
    w = w[::-1].copy()
    V = np.ascontiguousarray(V[:, ::-1])
    for j in range(V.shape[1]):
        col = V[:, j]
        mags = np.abs(col)
        nz = np.flatnonzero(mags > 1e-12 * max(1.0, mags.max()))
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    scale = max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[j] - w[i]) <= tie_tol * scale:
            j += 1
        if j - i > 1:
            block = V[:, i:j]
            # lexsort keys: last row is primary, so feed rows bottom-up
            order = np.lexsort(np.round(block, 10)[::-1])
            V[:, i:j] = block[:, order]
        i = j
    return w, V


def top_d_projector(M: np.ndarray, d: int):
    """Rank-d projector onto the top-d eigenvectors of M and the eigenvalue sum."""
    w, V = eigh_desc(M)
    Vd = V[:, :d]
    return Vd @ Vd.T, float(w[:d].sum()), Vd


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization: svec(A) . svec(B) == <A, B>."""
    n = M.shape[0]
    iu = np.triu_indices(n)
    return M[iu] * np.where(iu[0] == iu[1], 1.0, SQRT2)


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    M = np.zeros((n, n))
    iu = np.triu_indices(n)
    M[iu] = v * np.where(iu[0] == iu[1], 1.0, 1.0 / SQRT2)
    return M + M.T - np.diag(np.diag(M))


def svec_basis(n: int) -> np.ndarray:
    """Matrix mapping svec coordinates to the full column-major n*n vector."""
    N = n * (n + 1) // 2
    T = np.zeros((n * n, N))
    iu = np.triu_indices(n)
    for col, (i, j) in enumerate(zip(*iu)):
        E = np.zeros((n, n))
        if i == j:
            E[i, i] = 1.0
        else:
            E[i, j] = E[j, i] = 1.0 / SQRT2
        T[:, col] = E.flatten(order="F")
    return T


def nullspace(M: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the nullspace of M, rank revealed by SVD."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    q = M.shape[1]
    if M.shape[0] == 0 or not np.any(M):
        return np.eye(q)
    _, S, Vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(S > rel_tol * S[0]))
    return Vt[rank:].T


def random_frames(n: int, d: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Batch of `trials` orthonormal n-by-d frames from QR of Gaussian matrices."""
    G = rng.standard_normal((trials, n, d))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.einsum("tii->ti", R))
    signs[signs == 0] = 1.0
    return Q * signs[:, None, :]


def principal_angles(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Principal angles between the column spaces of U and V (orthonormal bases)."""
    s = np.linalg.svd(U.T @ V, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def orthonormal_columns(M: np.ndarray, tol: float = 1e-8) -> bool:
    d = M.shape[1]
    return bool(np.abs(M.T @ M - np.eye(d)).max() <= tol)
