"""Sparse storage and direct solves."""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

PIVOT_WARN = 1e-13
RESIDUAL_TOL = 1e-10


class SingularMatrixError(RuntimeError):
    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


class ConditioningWarning(UserWarning):
    pass


class TripletAccumulator:
    """Collects (i, j, value) contributions; duplicates are summed on finalize."""

    def __init__(self, shape):
        if np.isscalar(shape):
            shape = (int(shape), int(shape))
        self.shape = tuple(shape)
        self._rows, self._cols, self._vals = [], [], []

    def accumulate(self, i, j, value):
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        j = np.atleast_1d(np.asarray(j, dtype=np.int64))
        v = np.broadcast_to(np.asarray(value, dtype=float), i.shape)
        if i.size and (i.min() < 0 or i.max() >= self.shape[0]
                       or j.min() < 0 or j.max() >= self.shape[1]):
            raise IndexError(f"index out of range for a {self.shape} matrix")
        self._rows.append(i)
        self._cols.append(j)
        self._vals.append(np.array(v, dtype=float))

    def finalize(self):
        if not self._rows:
            return sp.csr_matrix(self.shape)
        A = sp.coo_matrix((np.concatenate(self._vals),
                           (np.concatenate(self._rows), np.concatenate(self._cols))),
                          shape=self.shape).tocsr()
        A.sum_duplicates()
        A.eliminate_zeros()
        return A


def is_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    if A.nnz == 0:
        return True
    scale = abs(A).max()
    diff = A - A.T
    return diff.nnz == 0 or abs(diff).max() <= rtol * scale


class Factorization:
    """Sparse LU factorization reusable for several right-hand sides."""

    def __init__(self, A, labels=None):
        A = sp.csc_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.A = A
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrixError(f"factorization failed: {exc}", self._find_zero_pivot()) from exc
        piv = np.abs(self._lu.U.diagonal())
        # pivot j eliminates unknown inv(perm_c)[j]
        unknown = np.argsort(self._lu.perm_c)
        if piv.min() == 0.0:
            k = int(unknown[np.argmin(piv)])
            raise SingularMatrixError(f"zero pivot at unknown {k}", k)
        small = piv < PIVOT_WARN * piv.max()
        if small.any():
            k = int(unknown[np.argmin(piv)])
            name = labels[k] if labels is not None else k
            warnings.warn(f"tiny pivot ({piv.min():.2e} vs {piv.max():.2e}) at unknown {name}; "
                          "enrichment may be nearly linearly dependent", ConditioningWarning)

    def _find_zero_pivot(self):
        d = np.abs(self.A.diagonal())
        rows = np.diff(self.A.tocsr().indptr)
        empty = np.nonzero(rows == 0)[0]
        if empty.size:
            return int(empty[0])
        return int(np.argmin(d)) if d.size else None

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("solve produced non-finite values")
        return x


def solve(A, b, check=True):
    """Solve ``A x = b`` by sparse LU and verify the residual."""
    x = Factorization(A).solve(b)
    if check:
        check_residual(A, x, b)
    return x


def check_residual(A, x, b, tol=RESIDUAL_TOL):
    A = sp.csr_matrix(A)
    if A.shape[0] == 0:
        return 0.0
    res = np.linalg.norm(A @ x - b)
    scale = abs(A).max() * np.linalg.norm(x) + np.linalg.norm(b)
    if res > tol * scale:
        log.warning("linear solve residual %.3e exceeds %.1e of scale %.3e", res, tol, scale)
    return res / scale if scale else res
