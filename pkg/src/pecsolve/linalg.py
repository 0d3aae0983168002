"""Sparse storage and direct LU solves for the saddle-point and LDG systems.

Factorization is delegated to SuperLU (scipy.sparse.linalg.splu), which is
sequential and deterministic: identical input matrices give bitwise
identical factors and solutions.  A factorization is read-only after
construction and may be shared across solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from pecsolve.errors import SingularSystemError

PIVOT_RTOL = 1e-14  # pivot magnitude below PIVOT_RTOL * max|A| counts as singular


class SparseMatrix:
    """Triplet builder that finalizes to CSR with duplicates summed."""

    def __init__(self, n_rows: int, n_cols: int | None = None, symmetric: bool = False):
        self.n_rows = n_rows
        self.n_cols = n_rows if n_cols is None else n_cols
        self.symmetric = symmetric
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._csr: sp.csr_matrix | None = None

    def add(self, rows, cols, vals) -> None:
        if self._csr is not None:
            raise RuntimeError("matrix already finalized")
        r = np.atleast_1d(np.asarray(rows, dtype=np.int64)).ravel()
        c = np.atleast_1d(np.asarray(cols, dtype=np.int64)).ravel()
        v = np.atleast_1d(np.asarray(vals, dtype=float)).ravel()
        if not (r.size == c.size == v.size):
            raise ValueError("rows, cols, vals must have matching lengths")
        self._rows.append(r)
        self._cols.append(c)
        self._vals.append(v)

    def add_block(self, rows, cols, block) -> None:
        """Scatter a dense (len(rows), len(cols)) block."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        block = np.asarray(block, dtype=float)
        rr = np.repeat(rows, cols.size)
        cc = np.tile(cols, rows.size)
        self.add(rr, cc, block.ravel())

    def tocsr(self) -> sp.csr_matrix:
        if self._csr is None:
            if self._rows:
                r = np.concatenate(self._rows)
                c = np.concatenate(self._cols)
                v = np.concatenate(self._vals)
            else:
                r = c = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            m = sp.coo_matrix((v, (r, c)), shape=(self.n_rows, self.n_cols))
            csr = m.tocsr()
            csr.sum_duplicates()
            self._csr = csr
        return self._csr

    def check_symmetric(self, tol: float = 1e-12) -> bool:
        a = self.tocsr()
        diff = (a - a.T).tocoo()
        scale = max(1.0, abs(a).max() if a.nnz else 1.0)
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= tol * scale


@dataclass
class Factorization:
    """LU factors of one matrix; solve() is reusable and thread-safe for reads."""

    n: int
    _lu: object = field(repr=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs length {b.shape[0]} != system size {self.n}")
        return self._lu.solve(b)


def factorize(a) -> Factorization:
    """Sparse LU with partial pivoting; raises SingularSystemError on breakdown."""
    if isinstance(a, SparseMatrix):
        a = a.tocsr()
    a = sp.csc_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    scale = float(np.max(np.abs(a.data))) if a.nnz else 0.0
    if scale == 0.0:
        raise SingularSystemError("all-zero matrix")
    try:
        # Natural ordering keeps the factorization deterministic across scipy builds.
        lu = splu(a, permc_spec="COLAMD", options={"SymmetricMode": False})
    except RuntimeError as exc:  # SuperLU signals exact singularity this way
        raise SingularSystemError(str(exc)) from exc
    umin = float(np.min(np.abs(lu.U.diagonal())))
    if not np.isfinite(umin) or umin <= PIVOT_RTOL * scale:
        raise SingularSystemError(
            f"pivot {umin:.3e} below threshold {PIVOT_RTOL:.0e} * max|A| = {PIVOT_RTOL * scale:.3e}"
        )
    return Factorization(n=a.shape[0], _lu=lu)


def solve(fact: Factorization, b: np.ndarray) -> np.ndarray:
    """Solve A x = b against a prior factorization."""
    return fact.solve(b)
