"""Sparse/dense kernels used by the GCN layers and the scores.

Sparse matrices are ``scipy.sparse.csr_matrix`` (row-compressed); dense
matrices are float64 ``numpy`` arrays.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def normalize_adjacency(a) -> sp.csr_matrix:
    """Symmetric GCN normalisation ``D^-1/2 (I + A) D^-1/2``.

    ``I + A`` is binarised, so an adjacency that already carries self-loops
    is not double counted.  The input is left untouched.
    """
    a = sp.csr_matrix(a, dtype=np.float64, copy=True)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a_tilde = (a + sp.identity(a.shape[0], format="csr")).tocsr()
    a_tilde.eliminate_zeros()
    a_tilde.data[:] = 1.0
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    out = a_tilde.tocoo()
    out.data = 1.0 / np.sqrt(deg[out.row] * deg[out.col])
    out = out.tocsr()
    out.sort_indices()
    return out


def spmm(a, h: np.ndarray) -> np.ndarray:
    """Sparse (or dense) matrix times dense matrix."""
    h = np.asarray(h, dtype=np.float64)
    if a.shape[1] != h.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {h.shape}")
    if sp.issparse(a):
        return np.asarray(a @ h)
    return np.asarray(a, dtype=np.float64) @ h


def frobenius_sq(a, b) -> float:
    a = np.asarray(a.toarray() if sp.issparse(a) else a, dtype=np.float64)
    b = np.asarray(b.toarray() if sp.issparse(b) else b, dtype=np.float64)
    _check_same_shape(a, b)
    d = a - b
    return float(np.einsum("ij,ij->", d, d))


def row_l2(a, b, row: int | None = None):
    """Euclidean distance between matching rows; all rows when ``row`` is None."""
    a = np.asarray(a.toarray() if sp.issparse(a) else a, dtype=np.float64)
    b = np.asarray(b.toarray() if sp.issparse(b) else b, dtype=np.float64)
    _check_same_shape(a, b)
    if row is not None:
        d = a[row] - b[row]
        return float(np.sqrt(d @ d))
    d = a - b
    return np.sqrt(np.einsum("ij,ij->i", d, d))
