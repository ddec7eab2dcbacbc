"""Hard-threshold (rank-K) SVD truncation and the partitioned low-rank step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from phdct.hankel import HankelMatrix, PartitionSet

# aspect ratio beyond which the Gram-matrix route replaces a dense SVD
GRAM_ASPECT = 4


@dataclass(frozen=True)
class RankSpec:
    K: int = 38
    per_part: bool = True

    def __post_init__(self):
        if not 1 <= self.K <= 64:
            raise ValueError("K must lie in [1, 64]")


def singular_values(M: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)


def _top_eigvecs(G: np.ndarray, K: int) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    order = np.argsort(w)[::-1]
    return V[:, order[:K]]


def svd_hard_threshold(M: np.ndarray, K: int) -> np.ndarray:
    """Keep the ``K`` leading singular triplets of ``M``.

    Tall-skinny (or short-wide) inputs go through the eigen-decomposition of
    the small Gram matrix: ``U_K D_K V_K^T = M V_K V_K^T``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("svd_hard_threshold needs a non-empty 2-D matrix")
    if K < 1:
        raise ValueError("K must be >= 1")
    m, n = M.shape
    if K >= min(m, n):
        return M.copy()
    if m >= GRAM_ASPECT * n:
        V = _top_eigvecs(M.T @ M, K)
        return (M @ V) @ V.T
    if n >= GRAM_ASPECT * m:
        U = _top_eigvecs(M @ M.T, K)
        return U @ (U.T @ M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return (U[:, :K] * s[:K]) @ Vt[:K]


def lr_step(parts: PartitionSet, spec: RankSpec) -> HankelMatrix | np.ndarray:
    """Low-rank projection of a triple*-partitioned Hankel matrix.

    With ``per_part`` the four half-blocks that overlap (H1R, H3L, H2L, H3R)
    are truncated individually before the overlap mean; the stitched matrix
    ``[H1L; mean(H1R, H3L); mean(H2L, H3R); H2R]`` is then truncated as a whole.
    """
    parts.check()
    K = spec.K
    s1, s2 = parts.split1, parts.split2
    p1, p2, p3 = parts.parts()
    n1r = p1.shape[0] - s1
    h1r, h3l = p1[s1:], p3[:n1r]
    h2l, h3r = p2[:s2], p3[n1r:]
    if spec.per_part:
        h1r, h3l, h2l, h3r = (svd_hard_threshold(b, K) for b in (h1r, h3l, h2l, h3r))
    stitched = np.concatenate([p1[:s1], (h1r + h3l) / 2, (h2l + h3r) / 2, p2[s2:]])
    out = svd_hard_threshold(stitched, K)
    if parts.src_dims is None:
        return out
    return HankelMatrix(out, parts.src_dims)
