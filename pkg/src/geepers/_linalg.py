"""Rank-checked least squares shared by the model-fitting modules."""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import RankDeficiencyError

_RANK_TOL_FACTOR = 1e-10


def _deficiency(X: np.ndarray) -> bool:
    """True when some pivoted-QR diagonal is below tol * largest column norm."""
    n, p = X.shape
    if p == 0:
        return False
    if p > n:
        return True
    _, r, _ = linalg.qr(X, mode="economic", pivoting=True)
    ref = float(np.sqrt((X * X).sum(axis=0)).max())
    return bool((np.abs(np.diag(r)) <= _RANK_TOL_FACTOR * ref).any())


def _involved_columns(X: np.ndarray, names) -> list[str]:
    """Columns that are (numerically) linear combinations of the others.

    A column is involved in a collinearity exactly when deleting it does not
    reduce the numerical rank.  Only called on the error path, so the
    per-column rank computations are acceptable.
    """
    n, p = X.shape
    ref = float(np.sqrt((X * X).sum(axis=0)).max())
    tol = _RANK_TOL_FACTOR * ref * max(n, p)
    base = np.linalg.matrix_rank(X, tol=tol)
    out = []
    for j in range(p):
        rest = np.delete(X, j, axis=1)
        if np.linalg.matrix_rank(rest, tol=tol) == base:
            out.append(names[j])
    return out


def check_column_rank(X: np.ndarray, names) -> None:
    """Raise RankDeficiencyError naming the involved columns if X lacks full rank."""
    if _deficiency(X):
        names = list(names)
        cols = _involved_columns(X, names) or names
        raise RankDeficiencyError(
            f"design matrix is rank deficient; collinear column(s): {cols}",
            columns=cols,
        )


def solve_least_squares(X: np.ndarray, y: np.ndarray, names) -> np.ndarray:
    """Least-squares coefficients via pivoted QR, erroring on rank deficiency."""
    n, p = X.shape
    if p == 0:
        raise RankDeficiencyError("design matrix has no columns")
    q, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    ref = float(np.sqrt((X * X).sum(axis=0)).max())
    if p > n or (np.abs(np.diag(r)) <= _RANK_TOL_FACTOR * ref).any():
        names = list(names)
        cols = _involved_columns(X, names) or names
        raise RankDeficiencyError(
            f"design matrix is rank deficient; collinear column(s): {cols}",
            columns=cols,
        )
    beta_piv = linalg.solve_triangular(r, q.T @ y)
    beta = np.empty(p)
    beta[piv] = beta_piv
    return beta
