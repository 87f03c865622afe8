"""Sparse assembly and direct solution of the per-step linear systems.

Thin layer over scipy.sparse: triplet assembly with duplicate summation into
CSR, and a sparse LU direct solve with a mandatory residual check.  A solve
either satisfies ``||Ax - b||_2 <= 1e-10 * (||b||_2 + 1)`` or raises
:class:`LinearSolveError`; NaNs are never returned.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

__all__ = ["LinearSolveError", "SolveReport", "assemble_from_triplets", "solve"]

RESIDUAL_TOL = 1e-10


class LinearSolveError(RuntimeError):
    """Raised when a linear system is singular or the residual check fails."""


@dataclass
class SolveReport:
    residual: float
    rhs_norm: float
    dim: int
    nnz: int


def assemble_from_triplets(rows, cols, values, dim):
    """Sum duplicate (row, col) triplets into a CSR matrix of size dim x dim."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    values = np.asarray(values, dtype=float)
    if rows.size and (rows.min() < 0 or rows.max() >= dim
                      or cols.min() < 0 or cols.max() >= dim):
        raise ValueError("triplet index out of range")
    mat = sparse.coo_matrix((values, (rows, cols)), shape=(dim, dim)).tocsr()
    mat.eliminate_zeros()
    return mat


def solve(matrix, rhs):
    """Direct sparse solve with residual verification.

    Returns ``(x, SolveReport)``.  Raises :class:`LinearSolveError` for a
    singular factorization, a non-finite solution, or a residual above
    ``1e-10 * (||b||_2 + 1)``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise LinearSolveError("non-finite right-hand side")
    csc = sparse.csc_matrix(matrix)
    try:
        lu = splu(csc)
        x = lu.solve(rhs)
    except RuntimeError as err:  # SuperLU signals singularity this way
        raise LinearSolveError(f"sparse LU failed: {err}") from err
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("solution contains non-finite entries")
    rhs_norm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(matrix @ x - rhs))
    if residual > RESIDUAL_TOL * (rhs_norm + 1.0):
        raise LinearSolveError(
            f"residual {residual:.3e} exceeds {RESIDUAL_TOL:.1e}*(||b||+1)"
        )
    return x, SolveReport(residual=residual, rhs_norm=rhs_norm,
                          dim=rhs.size, nnz=csc.nnz)
