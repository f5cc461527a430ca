"""Sparse storage, direct factorizations and Schur-complement saddle solves.

All sparse matrices are plain :class:`scipy.sparse.csr_matrix` objects in
canonical form (sorted column indices, duplicates summed).  Real symmetric
positive definite matrices are factorized with a banded Cholesky
decomposition, which is the natural choice for 1D finite element matrices;
everything else goes through SuperLU.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SPD = "spd"
LU = "lu"


class NumericsError(RuntimeError):
    pass


class NotPositiveDefiniteError(NumericsError):
    pass


class SingularMatrixError(NumericsError):
    pass


class RankDeficientError(NumericsError):
    pass


def sparse_from_triplets(
    triplets: Iterable[tuple[int, int, complex]] | tuple[Sequence, Sequence, Sequence],
    n_rows: int,
    n_cols: int,
) -> sp.csr_matrix:
    """Build a CSR matrix from ``(row, col, value)`` triplets.

    ``triplets`` is either an iterable of 3-tuples or a tuple of three
    equally long arrays ``(rows, cols, values)``.  Duplicates are summed.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        rows, cols, vals = (np.asarray(t) for t in triplets)
    else:
        items = list(triplets)
        if items:
            rows, cols, vals = (np.asarray(t) for t in zip(*items))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
    rows = rows.astype(np.int64, copy=False)
    cols = cols.astype(np.int64, copy=False)
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if np.any(bad):
        p = int(np.flatnonzero(bad)[0])
        raise IndexError(
            f"triplet #{p} ({rows[p]}, {cols[p]}, {vals[p]!r}) out of bounds "
            f"for a {n_rows}x{n_cols} matrix"
        )
    dtype = np.complex128 if np.iscomplexobj(vals) else np.float64
    A = sp.coo_matrix((vals.astype(dtype, copy=False), (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def matvec(A: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector has {x.shape[0]} entries")
    return A @ x


def is_symmetric(A: sp.spmatrix, rtol: float = 1e-14) -> bool:
    if A.shape[0] != A.shape[1]:
        return False
    scale = abs(A).max() if A.nnz else 0.0
    diff = A - A.T
    return not diff.nnz or abs(diff).max() <= rtol * scale


def bandwidth(A: sp.spmatrix) -> int:
    coo = A.tocoo()
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.col.astype(np.int64) - coo.row)))


class Factorization:
    """Reusable direct factorization of a square sparse matrix.

    Use :func:`factorize` to construct one.  ``solve`` accepts vectors or
    2D arrays of right-hand sides, real or complex.
    """

    def __init__(self, kind: str, n: int, data, matrix: sp.csr_matrix):
        self.kind = kind
        self.n = n
        self._data = data
        self.matrix = matrix

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factorization of size {self.n}, right-hand side {b.shape[0]}")
        if self.n == 0:
            return np.zeros_like(b)
        if self.kind == SPD:
            if np.iscomplexobj(b):
                return la.cho_solve_banded(self._data, b.real) + 1j * la.cho_solve_banded(self._data, b.imag)
            return la.cho_solve_banded(self._data, b)
        lu = self._data
        if np.iscomplexobj(b) and not self._complex:
            return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
        return lu.solve(b.astype(np.complex128 if self._complex else np.float64, copy=False))

    @property
    def _complex(self) -> bool:
        return np.iscomplexobj(self.matrix.data)


def factorize(A: sp.spmatrix, kind: str = SPD) -> Factorization:
    A = sp.csr_matrix(A)
    n, m = A.shape
    if n != m:
        raise ValueError(f"cannot factorize a non-square {n}x{m} matrix")
    A.eliminate_zeros()
    if n and (np.any(np.diff(A.indptr) == 0) or np.any(A.getnnz(axis=0) == 0)):
        empty = np.flatnonzero(np.diff(A.indptr) == 0)
        where = f"row {empty[0]}" if empty.size else "a column"
        raise SingularMatrixError(f"structurally singular matrix: {where} is empty")
    if kind == SPD:
        if np.iscomplexobj(A.data):
            raise ValueError("SPD factorization expects a real matrix")
        if not is_symmetric(A, 1e-12):
            raise ValueError("SPD factorization requires a symmetric matrix")
        u = bandwidth(A)
        coo = sp.triu(A).tocoo()
        ab = np.zeros((u + 1, n))
        ab[u + coo.row - coo.col, coo.col] = coo.data
        try:
            cb = la.cholesky_banded(ab, lower=False, check_finite=False)
        except la.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"matrix is not positive definite ({exc})") from None
        return Factorization(SPD, n, (cb, False), A)
    if kind == LU:
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SingularMatrixError(f"LU factorization failed: {exc}") from None
        return Factorization(LU, n, lu, A)
    raise ValueError(f"unknown factorization kind {kind!r}")


def solve(F: Factorization, b: np.ndarray) -> np.ndarray:
    return F.solve(b)


def saddle_solve(
    F_A: Factorization,
    C: sp.spmatrix,
    b: np.ndarray,
    label: str = "",
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``A x + C^T lam = b, C x = 0`` by the Schur complement.

    ``S = C A^{-1} C^T`` is formed densely, which is cheap because the
    number of constraints is small.
    """
    b = np.asarray(b)
    m, n = C.shape
    if n != F_A.n:
        raise ValueError(f"constraint matrix has {n} columns, factorization has size {F_A.n}")
    y = F_A.solve(b)
    if m == 0:
        return y, np.zeros(0, dtype=y.dtype)
    C = sp.csr_matrix(C)
    Z = F_A.solve(C.T.toarray())
    S = C @ Z
    S = 0.5 * (S + S.T)
    ev = np.linalg.eigvalsh(S)
    if ev[0] <= 1e-13 * max(ev[-1], np.finfo(float).tiny):
        where = f" on {label}" if label else ""
        raise RankDeficientError(f"rank-deficient Schur complement{where} (eigenvalue range {ev[0]:.3e}..{ev[-1]:.3e})")
    lam = la.solve(S, C @ y, assume_a="pos")
    return y - Z @ lam, lam
