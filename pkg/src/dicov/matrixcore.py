"""Dense symmetric linear algebra and the sparse symmetric coordinate format.

Dense symmetric matrices are plain ``numpy`` float arrays of shape (p, p);
:func:`as_symmetric` is the gatekeeper that validates and exactly symmetrizes
them. Data matrices are float arrays of shape (n, p).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InvalidParameter, NotPositiveDefinite

# relative asymmetry tolerated before as_symmetric refuses an input
_SYM_RTOL = 1e-9


def as_symmetric(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as an exactly symmetric float64 array.

    Inputs that are symmetric up to floating point noise (relative
    asymmetry below 1e-9) are averaged with their transpose. Anything
    further from symmetric is rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidParameter(f"{name} contains non-finite entries")
    if np.array_equal(a, a.T):
        return a.copy()
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - a.T)) > _SYM_RTOL * scale:
        raise InvalidParameter(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


def as_data_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionMismatch(f"data matrix must have shape (n >= 1, p >= 1), got {x.shape}")
    return x


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``a == L @ L.T``.

    Raises
    ------
    NotPositiveDefinite
        If a non-positive pivot is met during factorization.
    """
    a = as_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc


def invert_spd(a) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via its Cholesky factor."""
    a = as_symmetric(a)
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    inv = scipy.linalg.cho_solve(factor, np.eye(a.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def empirical_covariance(x) -> np.ndarray:
    """Mean-centred sample covariance with 1/n scaling.

    A single observation yields the zero matrix.
    """
    x = as_data_matrix(x)
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / x.shape[0]
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    """Upper-triangle coordinate storage of a symmetric ``p x p`` matrix.

    ``rows[k] <= cols[k]`` for every stored entry, entries are sorted by
    ``(row, col)`` without duplicates, and no stored value is zero. An
    off-diagonal entry stands for both of its mirror cells.
    """

    p: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not (rows.shape == cols.shape == values.shape):
            raise DimensionMismatch("rows, cols and values must have equal length")
        if self.p < 1:
            raise InvalidParameter("p must be >= 1")
        if rows.size:
            if rows.min() < 0 or cols.max() >= self.p:
                raise InvalidParameter("index out of range")
            if np.any(rows > cols):
                raise InvalidParameter("entries must lie in the upper triangle (i <= j)")
            keys = rows * self.p + cols
            if np.any(np.diff(keys) <= 0):
                raise InvalidParameter("entries must be sorted by (i, j) without duplicates")
            if np.any(values == 0):
                raise InvalidParameter("stored values must be nonzero")
        for arr in (rows, cols, values):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, a, keep=None) -> "SparseSymMatrix":
        """Collect the nonzero upper-triangle entries of ``a``.

        ``keep`` is an optional boolean mask; only cells where it is true
        (and the value is nonzero) are stored. The upper triangle of ``a`` is
        taken as authoritative.
        """
        a = np.asarray(a, dtype=np.float64)
        p = a.shape[0]
        rows, cols = np.triu_indices(p)
        vals = a[rows, cols]
        mask = vals != 0
        if keep is not None:
            mask &= np.asarray(keep, dtype=bool)[rows, cols]
        return cls(p, rows[mask], cols[mask], vals[mask])

    @classmethod
    def empty(cls, p: int) -> "SparseSymMatrix":
        return cls(p, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.p, self.p))
        out[self.rows, self.cols] = self.values
        out[self.cols, self.rows] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def n_diagonal(self) -> int:
        return int(np.count_nonzero(self.rows == self.cols))

    @property
    def n_offdiagonal(self) -> int:
        return self.nnz - self.n_diagonal

    def offdiag_support(self) -> set[tuple[int, int]]:
        off = self.rows != self.cols
        return set(zip(self.rows[off].tolist(), self.cols[off].tolist()))

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseSymMatrix):
            return NotImplemented
        # bitwise comparison of values so that round trips are checked exactly
        return (
            self.p == other.p
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64))
        )

    def __repr__(self) -> str:
        return f"SparseSymMatrix(p={self.p}, nnz={self.nnz})"
