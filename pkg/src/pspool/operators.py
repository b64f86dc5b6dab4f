"""Sparse pooling and unpooling operators.

The pooling matrix P has one row per coarse node whose entries are the
correspondence weights over fine nodes; rows are normalized to sum to
one, so mean pooling is X' = P X. Unpooling uses the row-normalized
transpose of the *unnormalized* P. Max pooling ignores weights and
takes the per-channel maximum over each correspondence set.

All applications reduce per output row only, so row-chunked parallel
execution is bit-identical to serial execution.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import OrphanRow, ShapeMismatch, ZeroRow


@dataclass(frozen=True)
class SparseOperator:
    """Immutable CSR matrix.

    Attributes
    ----------
    shape : (rows, cols)
    indptr : ndarray int64, length rows + 1
    indices : ndarray int64
        Column indices, strictly increasing within each row.
    values : ndarray float
        No explicit zeros are stored.
    """

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows, cols = self.shape
        indptr = np.ascontiguousarray(np.asarray(self.indptr, dtype=np.int64))
        indices = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        values = np.ascontiguousarray(np.asarray(self.values))
        if indptr.shape != (rows + 1,):
            raise ShapeMismatch(f"indptr length {indptr.shape} for {rows} rows")
        if indptr[0] != 0 or indptr[-1] != len(indices) or (np.diff(indptr) < 0).any():
            raise ShapeMismatch("indptr is not a monotone prefix of nnz")
        if len(indices) != len(values):
            raise ShapeMismatch("indices and values length mismatch")
        if len(indices):
            if indices.min() < 0 or indices.max() >= cols:
                raise ShapeMismatch("column index out of range")
            order_ok = all(
                (np.diff(indices[s:e]) > 0).all()
                for s, e in zip(indptr[:-1], indptr[1:])
                if e - s > 1
            )
            if not order_ok:
                raise ShapeMismatch("column indices must strictly increase per row")
        if (values == 0).any() or not np.isfinite(values).all():
            raise ShapeMismatch("values must be nonzero and finite")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.shape[0], dtype=self.values.dtype)
        np.add.at(out, np.repeat(np.arange(self.shape[0]), np.diff(self.indptr)),
                  self.values)
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=self.values.dtype)
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        dense[rows, self.indices] = self.values
        return dense

    def astype(self, dtype) -> "SparseOperator":
        return SparseOperator(self.shape, self.indptr, self.indices,
                              self.values.astype(dtype))

    @cached_property
    def T(self) -> "SparseOperator":
        """Transpose with the same entries, rebuilt in CSR order."""
        rows, cols = self.shape
        coo_rows = np.repeat(np.arange(rows), np.diff(self.indptr))
        order = np.lexsort((coo_rows, self.indices))
        new_indices = coo_rows[order]
        new_values = self.values[order]
        counts = np.bincount(self.indices, minlength=cols)
        new_indptr = np.zeros(cols + 1, dtype=np.int64)
        np.cumsum(counts, out=new_indptr[1:])
        return SparseOperator((cols, rows), new_indptr, new_indices, new_values)


def from_row_sets(sets, n_cols: int, dtype=np.float64) -> SparseOperator:
    """Build a CSR operator from per-row lists of (col, value) pairs.

    Each list must already be sorted by column index.
    """
    indptr = np.zeros(len(sets) + 1, dtype=np.int64)
    cols: list[int] = []
    vals: list[float] = []
    for r, s in enumerate(sets):
        indptr[r + 1] = indptr[r] + len(s)
        for c, v in s:
            cols.append(c)
            vals.append(v)
    return SparseOperator(
        (len(sets), n_cols), indptr,
        np.array(cols, dtype=np.int64),
        np.array(vals, dtype=dtype),
    )


def _row_normalized(op: SparseOperator, exc_type, what: str) -> SparseOperator:
    sums = op.row_sums()
    bad = np.flatnonzero(np.diff(op.indptr) == 0)
    if bad.size:
        raise exc_type(f"{what}: row {bad[0]} has no entries")
    zero = np.flatnonzero(sums == 0)
    if zero.size:
        raise exc_type(f"{what}: row {zero[0]} sums to zero")
    scale = np.repeat(1.0 / sums, np.diff(op.indptr))
    return SparseOperator(op.shape, op.indptr, op.indices, op.values * scale)


def build_pooling_matrix(corr: CorrespondenceSet):
    """Assemble the sparse pooling operator from a correspondence set.

    Returns
    -------
    P_norm : SparseOperator
        Row-normalized weights; every row sums to 1.
    P_raw : SparseOperator
        The unnormalized weights with the identical sparsity pattern.

    Raises
    ------
    ZeroRow
        A coarse node's weights all vanished (corrupted input).
    """
    P_raw = from_row_sets(corr.pool_sets, corr.n_fine)
    P_norm = _row_normalized(P_raw, ZeroRow, "pooling matrix")
    return P_norm, P_raw


def build_unpooling_matrix(P_raw: SparseOperator) -> SparseOperator:
    """Row-normalized transpose of the unnormalized pooling matrix.

    Raises
    ------
    OrphanRow
        Some fine node has no coarse parent; upstream balancing is
        supposed to prevent this.
    """
    return _row_normalized(P_raw.T, OrphanRow, "unpooling matrix")


def _spmm_block(op: SparseOperator, dense: np.ndarray, r0: int, r1: int):
    indptr = op.indptr
    s, e = indptr[r0], indptr[r1]
    out = np.zeros((r1 - r0, dense.shape[1]),
                   dtype=np.result_type(op.values.dtype, dense.dtype))
    if e == s:
        return out
    prod = op.values[s:e, None] * dense[op.indices[s:e]]
    lens = np.diff(indptr[r0 : r1 + 1])
    nonzero = np.flatnonzero(lens)
    starts = (indptr[r0 : r1][nonzero] - s).astype(np.int64)
    out[nonzero] = np.add.reduceat(prod, starts, axis=0)
    return out


def spmm(op: SparseOperator, dense: np.ndarray, jobs: int = 1) -> np.ndarray:
    """CSR times dense product with optional row-chunked threading.

    Rows are computed independently, so any chunking yields bit-identical
    results to the serial path.
    """
    dense = np.asarray(dense)
    if dense.ndim != 2 or dense.shape[0] != op.shape[1]:
        raise ShapeMismatch(
            f"operator {op.shape} applied to features {dense.shape}"
        )
    rows = op.shape[0]
    if jobs <= 1 or rows < 2 * jobs:
        return _spmm_block(op, dense, 0, rows)
    bounds = np.linspace(0, rows, jobs + 1).astype(int)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(
            lambda i: _spmm_block(op, dense, bounds[i], bounds[i + 1]),
            range(jobs),
        ))
    return np.vstack(parts)


def pool_mean(P_norm: SparseOperator, X: np.ndarray, jobs: int = 1) -> np.ndarray:
    """Mean pooling X' = P X over the normalized operator."""
    return spmm(P_norm, X, jobs=jobs)


def pool_max(corr: CorrespondenceSet, X: np.ndarray) -> np.ndarray:
    """Per-channel maximum over each correspondence set, weights ignored."""
    out, _ = pool_max_with_arg(corr, X)
    return out


def pool_max_with_arg(corr: CorrespondenceSet, X: np.ndarray):
    """Max pooling plus the fine index attaining each maximum.

    Ties go to the lowest fine index, which fixes the gradient routing.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != corr.n_fine:
        raise ShapeMismatch(
            f"features {X.shape} for {corr.n_fine} fine nodes"
        )
    out = np.empty((corr.n_coarse, X.shape[1]), dtype=X.dtype)
    arg = np.empty((corr.n_coarse, X.shape[1]), dtype=np.int64)
    for i, s in enumerate(corr.pool_sets):
        cols = np.array([j for j, _ in s], dtype=np.int64)
        gathered = X[cols]
        local = np.argmax(gathered, axis=0)  # first max = lowest index
        arg[i] = cols[local]
        out[i] = gathered[local, np.arange(X.shape[1])]
    return out, arg


def unpool(U: SparseOperator, Xc: np.ndarray, jobs: int = 1) -> np.ndarray:
    """Redistribute coarse features to fine nodes, X = U Xc."""
    return spmm(U, Xc, jobs=jobs)
