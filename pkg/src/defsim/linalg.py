"""Dense and sparse linear-algebra substrate shared by the solvers.

LU with partial pivoting is the single factorization primitive. Matrices
that must be regular (node-stage and coupled-stage blocks, Newton
Jacobians) are factorized once and solved repeatedly; singularity is
reported as a flag with the failing pivot row rather than an exception so
callers can turn it into a structural diagnostic.

Small systems (n <= DENSE_LIMIT) are factorized densely even when
assembled sparse; above that a sparse LU takes over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import StructuralError

DENSE_LIMIT = 2000

# A pivot this small relative to the largest one is treated as a zero pivot.
# Catches structurally singular systems that land on a ~1e-16 pivot in
# floating point instead of an exact zero.
_PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed-row matrix: row offsets, sorted unique column indices, values."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals):
        """Build from triplets; duplicate entries are summed."""
        m = sp.coo_matrix(
            (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))),
            shape=(n_rows, n_cols),
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(n_rows, n_cols, m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=float)
        m = sp.csr_matrix(a)
        m.sort_indices()
        return cls(a.shape[0], a.shape[1], m.indptr, m.indices, m.data)

    def to_scipy(self):
        return sp.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n_rows, self.n_cols)
        )

    def to_dense(self):
        return self.to_scipy().toarray()


def spmv(a: SparseMatrix, x):
    """Matrix-vector product y = A x."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != a.n_cols:
        raise StructuralError(
            f"spmv dimension mismatch: matrix is {a.n_rows}x{a.n_cols}, vector has {x.shape[0]}"
        )
    return a.to_scipy() @ x


class LuFactor:
    """LU factorization with partial pivoting, reusable for many right-hand sides.

    Dense inputs are row/column equilibrated before factorizing so badly
    scaled systems (pressures in Pa against per-unit voltages) neither lose
    accuracy nor trip the singularity detection. ``singular`` is set instead
    of raising so callers can report which pivot failed; ``solve`` on a
    singular factor raises StructuralError.
    """

    def __init__(self, lu, piv, singular, pivot_index, n, sparse_solver=None,
                 row_scale=None, col_scale=None):
        self._lu = lu
        self._piv = piv
        self._sparse = sparse_solver
        self._row_scale = row_scale
        self._col_scale = col_scale
        self.singular = bool(singular)
        self.pivot_index = pivot_index
        self.n = n

    def solve(self, b):
        if self.singular:
            raise StructuralError(
                f"cannot solve with a singular factorization (pivot row {self.pivot_index})"
            )
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise StructuralError(
                f"solve dimension mismatch: factor is {self.n}x{self.n}, rhs has {b.shape[0]}"
            )
        if self._sparse is not None:
            return self._sparse(b)
        rhs = b if self._row_scale is None else (b.T * self._row_scale).T
        x = sla.lu_solve((self._lu, self._piv), rhs, check_finite=False)
        if self._col_scale is not None:
            x = (x.T * self._col_scale).T
        return x


def solve(factor: LuFactor, b):
    """Solve with a previously computed factorization."""
    return factor.solve(b)


def lu_factor(a) -> LuFactor:
    """Factorize PA = LU. Square input required; singularity is flagged, not raised."""
    if isinstance(a, SparseMatrix):
        if a.n_rows != a.n_cols:
            raise StructuralError(f"lu_factor requires a square matrix, got {a.n_rows}x{a.n_cols}")
        if a.n_rows <= DENSE_LIMIT:
            return _dense_lu(a.to_dense())
        return _sparse_lu(a.to_scipy())
    if sp.issparse(a):
        if a.shape[0] != a.shape[1]:
            raise StructuralError(f"lu_factor requires a square matrix, got {a.shape}")
        if a.shape[0] <= DENSE_LIMIT:
            return _dense_lu(np.asarray(a.todense(), dtype=float))
        return _sparse_lu(a.tocsc())
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError(f"lu_factor requires a square matrix, got shape {a.shape}")
    return _dense_lu(a)


def _dense_lu(a: np.ndarray) -> LuFactor:
    n = a.shape[0]
    if n == 0:
        return LuFactor(np.zeros((0, 0)), np.zeros(0, dtype=np.int32), False, None, 0)
    row_max = np.max(np.abs(a), axis=1)
    if np.any(row_max == 0.0):
        return LuFactor(None, None, True, int(np.argmax(row_max == 0.0)), n)
    r_scale = 1.0 / row_max
    scaled = a * r_scale[:, None]
    col_max = np.max(np.abs(scaled), axis=0)
    if np.any(col_max == 0.0):
        # a zero column shows up as a zero pivot below; keep scales finite
        col_max = np.where(col_max == 0.0, 1.0, col_max)
    c_scale = 1.0 / col_max
    scaled *= c_scale
    lu, piv, info = sla.lapack.dgetrf(scaled)
    if info < 0:
        raise StructuralError(f"illegal value in LU factorization (argument {-info})")
    diag = np.abs(np.diag(lu))
    dmax = diag.max() if diag.size else 0.0
    if info > 0:
        return LuFactor(lu, piv, True, int(info) - 1, n)
    if dmax == 0.0 or diag.min() <= _PIVOT_RTOL * dmax:
        return LuFactor(lu, piv, True, int(np.argmin(diag / max(dmax, 1.0))), n)
    return LuFactor(lu, piv, False, None, n, row_scale=r_scale, col_scale=c_scale)


def _sparse_lu(a) -> LuFactor:
    n = a.shape[0]
    try:
        solver = spla.splu(a.tocsc())
    except RuntimeError:
        # SuperLU reports exact singularity this way; the failing row is not exposed.
        return LuFactor(None, None, True, None, n)
    return LuFactor(None, None, False, None, n, sparse_solver=solver.solve)
