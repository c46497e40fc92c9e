"""Outcome regression on the imputed stratum regressor.

The design is [1, R, Z, Z*R, X] where R carries the observed stratum for
treated units and the estimated stratum probability for controls.  In
``interactions`` mode the covariates additionally enter crossed with R, Z,
and Z*R, giving stratum- and arm-specific covariate slopes.  Also provides
the per-unit estimating-function rows and derivative/outer-product blocks
used by the stacked variance, and the population moment check for the
imputed-regressor identification argument.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import solve_least_squares
from .data import Dataset, ImputedRegressor
from .errors import DataError

MODES = ("plain", "interactions")


def _rvec(r) -> np.ndarray:
    if isinstance(r, ImputedRegressor):
        return r.r
    return np.asarray(r, dtype=float)


def build_design(d: Dataset, r, mode: str = "plain") -> tuple[np.ndarray, list[str]]:
    """Assemble the outcome design matrix and its column names.

    Column order: intercept, R, Z, Z*R, then the covariates; in
    ``interactions`` mode the covariate-by-R, covariate-by-Z, and
    covariate-by-Z*R blocks follow in that order.
    """
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    rv = _rvec(r)
    if rv.shape != (d.n,):
        raise DataError("imputed regressor length does not match dataset")
    z = d.z.astype(float)
    cols = [np.ones(d.n), rv, z, z * rv]
    names = ["intercept", "r", "z", "z:r"]
    cols.append(d.xy)
    names.extend(d.xy_names)
    if mode == "interactions":
        cols.append(d.xy * rv[:, None])
        names.extend(f"{n}:r" for n in d.xy_names)
        cols.append(d.xy * z[:, None])
        names.extend(f"{n}:z" for n in d.xy_names)
        cols.append(d.xy * (z * rv)[:, None])
        names.extend(f"{n}:z:r" for n in d.xy_names)
    return np.column_stack(cols), names


def design_r_derivative(d: Dataset, mode: str = "plain") -> np.ndarray:
    """Derivative of each design row with respect to its R value.

    Used by the stacked variance: control rows' R values depend on the
    stratum-model coefficients, and this is the inner factor of that chain
    rule.
    """
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    z = d.z.astype(float)
    p = d.xy.shape[1]
    zero = np.zeros(d.n)
    zerox = np.zeros((d.n, p))
    cols = [zero, np.ones(d.n), zero, z, zerox]
    if mode == "interactions":
        cols.extend([d.xy, zerox, d.xy * z[:, None]])
    return np.column_stack(cols)


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit of the outcome regression."""

    beta: np.ndarray
    names: tuple[str, ...]
    design: np.ndarray
    residuals: np.ndarray
    mode: str


def fit_ols(d: Dataset, r, mode: str = "plain") -> OlsFit:
    """Fit the outcome regression by least squares.

    Parameters
    ----------
    d : Dataset
    r : ImputedRegressor or array of shape (n,)
    mode : {"plain", "interactions"}

    Raises
    ------
    RankDeficiencyError
        If the design is collinear; the error names every column involved
        (for instance R against a covariate that duplicates it).
    """
    X, names = build_design(d, r, mode)
    beta = solve_least_squares(X, d.y, names)
    resid = d.y - X @ beta
    return OlsFit(
        beta=beta,
        names=tuple(names),
        design=X,
        residuals=resid,
        mode=mode,
    )


def psi(d: Dataset, r, beta, mode: str = "plain") -> np.ndarray:
    """Per-unit estimating rows x_i * (y_i - x_i' beta) for the regression."""
    X, _ = build_design(d, r, mode)
    beta = np.asarray(beta, dtype=float)
    resid = d.y - X @ beta
    return resid[:, None] * X


def bread_a22(d: Dataset, r, mode: str = "plain") -> np.ndarray:
    """Derivative of the summed regression rows in beta: -X'X."""
    X, _ = build_design(d, r, mode)
    return -X.T @ X


def meat_b22(d: Dataset, r, beta, mode: str = "plain") -> np.ndarray:
    """Outer-product sum of the regression estimating rows."""
    rows = psi(d, r, beta, mode)
    return rows.T @ rows


def imputation_moment_components(d: Dataset, mus, scores, s_latent=None) -> np.ndarray:
    """Per-unit rows of the four-part moment vector behind the imputation step.

    Under randomization and outcome-score conditional independence, each
    component has expectation zero at the true group means, which the mean
    over a large simulated sample can check directly.

    Parameters
    ----------
    d : Dataset
    mus : sequence of four floats
        (mu_c0, mu_c1, mu_t0, mu_t1): stratum-by-arm outcome means.
    scores : array of shape (n,)
        True stratum probabilities e(x) for every unit.
    s_latent : array of shape (n,), optional
        Full latent stratum vector.  Only used for consistency checks: it
        must be 0/1 with no missing entries and agree with the observed
        strata on treated rows.

    Returns
    -------
    ndarray of shape (n, 4)
    """
    mu_c0, mu_c1, mu_t0, mu_t1 = (float(m) for m in mus)
    e = np.asarray(scores, dtype=float)
    if e.shape != (d.n,):
        raise DataError("scores length does not match dataset")
    if (e < 0).any() or (e > 1).any() or not np.isfinite(e).all():
        raise DataError("score outside [0, 1]")
    if s_latent is not None:
        s_latent = np.asarray(s_latent, dtype=float)
        if s_latent.shape != (d.n,) or np.isnan(s_latent).any():
            raise DataError("latent strata missing or wrong length")
        if not np.all(np.isin(s_latent, [0.0, 1.0])):
            raise DataError("latent strata must be 0/1")
        if not np.array_equal(s_latent[d.treated], d.s[d.treated]):
            raise DataError("latent strata disagree with observed treated strata")
    z = d.z.astype(float)
    y = d.y
    s = np.where(d.treated, d.s, 0.0)
    dc = mu_c1 - mu_c0
    dt = mu_t1 - mu_t0
    c1 = (1.0 - z) * (y - mu_c0 - e * dc)
    c2 = (1.0 - z) * (e * y - e * mu_c0 - e * e * dc)
    c3 = z * (y - mu_t0 - s * dt)
    c4 = z * (s * y - s * mu_t0 - s * s * dt)
    return np.column_stack([c1, c2, c3, c4])


def imputation_moment_means(d: Dataset, mus, scores, s_latent=None) -> np.ndarray:
    """Sample mean of the four moment components; near zero at the true means."""
    return imputation_moment_components(d, mus, scores, s_latent).mean(axis=0)
