"""Two-stage principal-effect estimator with a stacked sandwich variance.

Stage one fits the stratum model on the treated arm; stage two regresses the
outcome on the imputed stratum regressor.  Both stages' estimating equations
are stacked and the joint covariance is the sandwich A^{-1} B A^{-T}, so the
reported standard errors carry the stage-one estimation uncertainty through
to the effect estimates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, build_imputed_regressor
from .errors import DataError, SingularVarianceError
from .logistic import (
    LogisticFit,
    ScoreDiagnostics,
    _probs,
    bread_a11,
    design_s,
    fit_logistic,
    meat_b11,
    omega,
    score_diagnostics,
)
from .ols import OlsFit, bread_a22, build_design, design_r_derivative, fit_ols, meat_b22, psi


@dataclass(frozen=True)
class Effects:
    """Principal effects with delta-method standard errors."""

    tau0: float
    tau1: float
    se0: float
    se1: float
    cov01: float


@dataclass(frozen=True)
class GeepersFit:
    """Joint fit of the stratum model and the outcome regression.

    ``vcov`` is the stacked sandwich covariance over (alpha, beta); the
    effect fields are delta-method functionals of it.  In ``interactions``
    mode ``xbar_s0``/``xbar_s1`` hold the covariate means of the treated
    non-taker and taker subgroups at which the effects are evaluated (held
    fixed in the standard errors).
    """

    logistic: LogisticFit
    ols: OlsFit
    vcov: np.ndarray
    tau0: float
    tau1: float
    se_tau0: float
    se_tau1: float
    cov_tau: float
    mode: str
    diagnostics: ScoreDiagnostics
    xbar_s0: np.ndarray | None = None
    xbar_s1: np.ndarray | None = None

    # Group-mean readings of the coefficients: with a saturated design the
    # regression reproduces the four stratum-by-arm weighted means.
    @property
    def mu_c0(self) -> float:
        b = self.ols.beta
        return float(b[0])

    @property
    def mu_c1(self) -> float:
        b = self.ols.beta
        return float(b[0] + b[1])

    @property
    def mu_t0(self) -> float:
        b = self.ols.beta
        return float(b[0] + b[2])

    @property
    def mu_t1(self) -> float:
        b = self.ols.beta
        return float(b[0] + b[1] + b[2] + b[3])


def a21_block(d: Dataset, alpha, beta, mode: str = "plain") -> np.ndarray:
    """Derivative of the summed regression rows in the stratum coefficients.

    Only control rows contribute: their R values are fitted probabilities,
    so each regression row depends on alpha through R.  Writing u_i for the
    derivative of the design row in R, the chain rule gives per-unit blocks

        (u_i * resid_i - x_i * (u_i' beta)) * f'(eta_i) xs_i'

    where f' is the logistic density p(1-p).  Treated rows have R equal to
    the observed stratum and contribute zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    Xs, _ = design_s(d)
    eta = Xs @ alpha
    p = _probs(eta)
    r = np.where(d.treated, d.s, p)
    X, _ = build_design(d, r, mode)
    u = design_r_derivative(d, mode)
    resid = d.y - X @ beta
    coeff = u * resid[:, None] - X * (u @ beta)[:, None]
    g = (1.0 - d.z) * p * (1.0 - p)
    return (coeff * g[:, None]).T @ Xs


def fd_a21(d: Dataset, alpha, beta, mode: str = "plain", *, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference version of ``a21_block`` for diagnostics."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    Xs, _ = design_s(d)

    def sum_psi(a):
        p = _probs(Xs @ a)
        r = np.where(d.treated, d.s, p)
        X, _ = build_design(d, r, mode)
        return X.T @ (d.y - X @ beta)

    cols = []
    for j in range(alpha.size):
        step = np.zeros_like(alpha)
        step[j] = eps
        cols.append((sum_psi(alpha + step) - sum_psi(alpha - step)) / (2.0 * eps))
    return np.column_stack(cols)


def sandwich_vcov(a11, a21, a22, b11, b12, b22) -> np.ndarray:
    """Assemble the stacked sandwich covariance A^{-1} B A^{-T}.

    A is block lower-triangular (the stratum equations do not depend on the
    regression coefficients).  The result is symmetrized; an A condition
    number above 1/sqrt(machine eps) is a hard error rather than a silent
    near-singular inversion.
    """
    a11 = np.asarray(a11, dtype=float)
    a21 = np.asarray(a21, dtype=float)
    a22 = np.asarray(a22, dtype=float)
    ka = a11.shape[0]
    kb = a22.shape[0]
    if a11.shape != (ka, ka) or a22.shape != (kb, kb) or a21.shape != (kb, ka):
        raise DataError("sandwich blocks have inconsistent shapes")
    k = ka + kb
    A = np.zeros((k, k))
    A[:ka, :ka] = a11
    A[ka:, :ka] = a21
    A[ka:, ka:] = a22
    B = np.zeros((k, k))
    B[:ka, :ka] = b11
    B[:ka, ka:] = b12
    B[ka:, :ka] = np.asarray(b12).T
    B[ka:, ka:] = b22
    cond = np.linalg.cond(A)
    limit = 1.0 / np.sqrt(np.finfo(float).eps)
    if not np.isfinite(cond) or cond > limit:
        raise SingularVarianceError(
            f"stacked derivative matrix is ill-conditioned (cond={cond:.3e}, "
            f"limit={limit:.3e})"
        )
    half = np.linalg.solve(A, B)
    V = np.linalg.solve(A, half.T).T
    return 0.5 * (V + V.T)


def extract_effects(beta, vcov, *, mode: str = "plain", n_alpha: int = 0,
                    n_covariates: int | None = None,
                    xbar_s0=None, xbar_s1=None) -> Effects:
    """Read the principal effects off the regression coefficients.

    In plain mode tau0 is the Z coefficient and tau1 adds the Z*R
    coefficient.  In interactions mode each effect additionally carries its
    covariate-by-arm slopes evaluated at the supplied subgroup covariate
    means, which are treated as fixed constants.

    Parameters
    ----------
    beta : regression coefficient vector.
    vcov : joint covariance; the beta block starts at ``n_alpha``.
    """
    beta = np.asarray(beta, dtype=float)
    vcov = np.asarray(vcov, dtype=float)
    kb = beta.size
    k = n_alpha + kb
    if vcov.shape != (k, k):
        raise DataError(f"vcov shape {vcov.shape} does not match {k} parameters")
    c0 = np.zeros(k)
    c1 = np.zeros(k)
    c0[n_alpha + 2] = 1.0
    c1[n_alpha + 2] = 1.0
    c1[n_alpha + 3] = 1.0
    if mode == "interactions":
        p = (kb - 4) // 4 if n_covariates is None else n_covariates
        if kb != 4 + 4 * p:
            raise DataError("beta length inconsistent with interactions design")
        if p:
            xb0 = np.asarray(xbar_s0, dtype=float)
            xb1 = np.asarray(xbar_s1, dtype=float)
            if xb0.shape != (p,) or xb1.shape != (p,):
                raise DataError("subgroup covariate means needed in interactions mode")
            g3 = slice(n_alpha + 4 + 2 * p, n_alpha + 4 + 3 * p)
            g4 = slice(n_alpha + 4 + 3 * p, n_alpha + 4 + 4 * p)
            c0[g3] = xb0
            c1[g3] = xb1
            c1[g4] = xb1
    elif mode != "plain":
        raise DataError(f"unknown mode {mode!r}")
    tau0 = float(c0[n_alpha:] @ beta)
    tau1 = float(c1[n_alpha:] @ beta)
    var0 = float(c0 @ vcov @ c0)
    var1 = float(c1 @ vcov @ c1)
    cov01 = float(c0 @ vcov @ c1)
    if min(var0, var1) < -1e-8:
        raise SingularVarianceError("negative variance from the joint covariance")
    return Effects(
        tau0=tau0,
        tau1=tau1,
        se0=float(np.sqrt(max(var0, 0.0))),
        se1=float(np.sqrt(max(var1, 0.0))),
        cov01=cov01,
    )


def fit_geepers(d: Dataset, mode: str = "plain", *,
                logistic_fit: LogisticFit | None = None,
                use_fd_a21: bool = False) -> GeepersFit:
    """Fit both stages and the stacked sandwich covariance.

    Parameters
    ----------
    d : Dataset
    mode : {"plain", "interactions"}
        Whether covariate slopes are shared or stratum/arm specific.
    logistic_fit : LogisticFit, optional
        Reuse an existing stage-one fit (it must come from this dataset).
    use_fd_a21 : bool
        Replace the analytic cross-derivative block with its central
        finite-difference version; a diagnostic escape hatch.

    Returns
    -------
    GeepersFit
    """
    lf = logistic_fit if logistic_fit is not None else fit_logistic(d)
    diag = score_diagnostics(d, lf)
    reg = build_imputed_regressor(d, lf.fitted)
    of = fit_ols(d, reg, mode)
    a11 = bread_a11(d, lf.alpha)
    a22 = bread_a22(d, reg, mode)
    a21 = (fd_a21 if use_fd_a21 else a21_block)(d, lf.alpha, of.beta, mode)
    b11 = meat_b11(d, lf.alpha)
    b22 = meat_b22(d, reg, of.beta, mode)
    b12 = omega(d, lf.alpha).T @ psi(d, reg, of.beta, mode)
    V = sandwich_vcov(a11, a21, a22, b11, b12, b22)
    xbar_s0 = xbar_s1 = None
    if mode == "interactions":
        taker = d.treated & (d.s == 1.0)
        nontaker = d.treated & (d.s == 0.0)
        xbar_s0 = d.xy[nontaker].mean(axis=0)
        xbar_s1 = d.xy[taker].mean(axis=0)
    eff = extract_effects(
        of.beta, V, mode=mode, n_alpha=lf.alpha.size,
        n_covariates=d.xy.shape[1], xbar_s0=xbar_s0, xbar_s1=xbar_s1,
    )
    return GeepersFit(
        logistic=lf,
        ols=of,
        vcov=V,
        tau0=eff.tau0,
        tau1=eff.tau1,
        se_tau0=eff.se0,
        se_tau1=eff.se1,
        cov_tau=eff.cov01,
        mode=mode,
        diagnostics=diag,
        xbar_s0=xbar_s0,
        xbar_s1=xbar_s1,
    )


def stacked_sums(d: Dataset, alpha, beta, mode: str = "plain") -> np.ndarray:
    """Summed stacked estimating equations at (alpha, beta)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    Xs, _ = design_s(d)
    p = _probs(Xs @ alpha)
    r = np.where(d.treated, d.s, p)
    top = omega(d, alpha).sum(axis=0)
    bottom = psi(d, r, beta, mode).sum(axis=0)
    return np.concatenate([top, bottom])


@dataclass(frozen=True)
class RefineResult:
    """One or more Newton steps on the stacked system from a starting point."""

    alpha: np.ndarray
    beta: np.ndarray
    max_step: float


def newton_refine(d: Dataset, fit: GeepersFit, *, steps: int = 1) -> RefineResult:
    """Newton-iterate the stacked equations starting from a two-stage fit.

    At a genuine two-stage solution the first step should move no
    coordinate materially; the returned ``max_step`` is the largest
    absolute coordinate move over all steps taken.
    """
    alpha = fit.logistic.alpha.copy()
    beta = fit.ols.beta.copy()
    mode = fit.mode
    ka = alpha.size
    worst = 0.0
    for _ in range(steps):
        Xs, _ = design_s(d)
        p = _probs(Xs @ alpha)
        r = np.where(d.treated, d.s, p)
        a11 = bread_a11(d, alpha)
        a22 = bread_a22(d, r, mode)
        a21 = a21_block(d, alpha, beta, mode)
        k = ka + beta.size
        A = np.zeros((k, k))
        A[:ka, :ka] = a11
        A[ka:, :ka] = a21
        A[ka:, ka:] = a22
        F = stacked_sums(d, alpha, beta, mode)
        delta = -np.linalg.solve(A, F)
        worst = max(worst, float(np.abs(delta).max()))
        alpha = alpha + delta[:ka]
        beta = beta + delta[ka:]
    return RefineResult(alpha=alpha, beta=beta, max_step=worst)


def to_json_dict(fit: GeepersFit) -> dict:
    """JSON-ready summary of a fit (schema documented in the README)."""
    return {
        "schema_version": 1,
        "estimator": "geepers",
        "mode": fit.mode,
        "tau0": fit.tau0,
        "tau1": fit.tau1,
        "se0": fit.se_tau0,
        "se1": fit.se_tau1,
        "cov01": fit.cov_tau,
        "alpha": [float(a) for a in fit.logistic.alpha],
        "beta": [float(b) for b in fit.ols.beta],
        "vcov": [[float(v) for v in row] for row in fit.vcov],
        "diagnostics": {
            "auc": fit.diagnostics.auc,
            "distinct_scores": fit.diagnostics.distinct_fitted,
            "converged": fit.logistic.converged,
        },
    }
