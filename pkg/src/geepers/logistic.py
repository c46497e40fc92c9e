"""Stratum-membership model: logistic regression fit on the treated arm.

The model is Pr(S = 1 | x) = expit(alpha' [1, x]) estimated by maximum
likelihood on treated units only, then used to score every unit.  Also
provides the estimating-function pieces (score rows, derivative and
outer-product blocks) consumed by the stacked variance, plus AUC
diagnostics for how well the scores separate the strata.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from ._linalg import check_column_rank
from .data import Dataset
from .errors import ConvergenceError, DataError, SeparationError

# Fitted probabilities are kept strictly inside (0, 1).
_PROB_FLOOR = 1e-12

# Standardized |coefficient| beyond which we declare quasi-separation.
_SEPARATION_BOUND = 30.0


def _probs(eta: np.ndarray) -> np.ndarray:
    return np.clip(expit(eta), _PROB_FLOOR, 1.0 - _PROB_FLOOR)


def _deviance(t: np.ndarray, eta: np.ndarray) -> float:
    # -2 * Bernoulli log-likelihood, computed from the linear predictor.
    return float(2.0 * (np.logaddexp(0.0, eta) - t * eta).sum())


def design_s(d: Dataset) -> tuple[np.ndarray, list[str]]:
    """Intercept-plus-covariates design for the stratum model, all units."""
    X = np.column_stack([np.ones(d.n), d.xs]) if d.xs.shape[1] else np.ones((d.n, 1))
    return X, ["intercept", *d.xs_names]


@dataclass(frozen=True)
class LogisticFit:
    """Fitted stratum-membership model.

    ``eta`` and ``fitted`` cover every unit in the dataset, not just the
    treated units the likelihood was built from.
    """

    alpha: np.ndarray
    names: tuple[str, ...]
    eta: np.ndarray
    fitted: np.ndarray
    converged: bool
    iterations: int
    deviance: float


@dataclass(frozen=True)
class ScoreDiagnostics:
    """How informative the estimated scores are about the strata."""

    auc: float
    cv_auc: float | None
    distinct_fitted: int


def _irls(X, t, names, max_iter, tol):
    """Newton/IRLS with step halving; returns (alpha, iterations, deviance)."""
    check_column_rank(X, names)
    n, p = X.shape
    sds = X.std(axis=0)
    alpha = np.zeros(p)
    tbar = float(t.mean())
    if np.all(X[:, 0] == 1.0):
        alpha[0] = np.log(tbar / (1.0 - tbar))
    eta = X @ alpha
    dev = _deviance(t, eta)
    for it in range(1, max_iter + 1):
        prob = _probs(eta)
        score = X.T @ (t - prob)
        if np.abs(score).max() < tol:
            return alpha, it, dev
        w = prob * (1.0 - prob)
        H = X.T @ (X * w[:, None])
        step = np.linalg.solve(H, score)
        lam = 1.0
        new_alpha = alpha
        new_eta = eta
        new_dev = dev
        for _ in range(30):
            cand_alpha = alpha + lam * step
            cand_eta = X @ cand_alpha
            cand_dev = _deviance(t, cand_eta)
            if cand_dev <= dev + 1e-12:
                new_alpha, new_eta, new_dev = cand_alpha, cand_eta, cand_dev
                break
            lam *= 0.5
        else:
            raise ConvergenceError("step halving failed to decrease the deviance")
        over = np.abs(new_alpha) * sds > _SEPARATION_BOUND
        if over.any():
            cols = [names[j] for j in np.where(over)[0]]
            raise SeparationError(
                f"quasi-complete separation: coefficient(s) {cols} diverging"
            )
        rel = abs(dev - new_dev) / (abs(dev) + 1.0)
        alpha, eta, dev = new_alpha, new_eta, new_dev
        if rel < 1e-10:
            return alpha, it, dev
    raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations")


def fit_logistic(d: Dataset, *, max_iter: int = 50, tol: float = 1e-8) -> LogisticFit:
    """Fit the stratum model on the treated arm and score all units.

    Parameters
    ----------
    d : Dataset
    max_iter : int
        Newton iteration budget; exhausting it raises ConvergenceError.
    tol : float
        Convergence when the score max-norm drops below this (or the
        relative deviance change drops below 1e-10).

    Returns
    -------
    LogisticFit
        With ``fitted`` strictly inside (0, 1) for every unit.

    Raises
    ------
    RankDeficiencyError
        If the treated-arm design is collinear (offending columns named).
    SeparationError
        If any standardized coefficient exceeds 30 during iteration.
    ConvergenceError
        If the iteration budget runs out.
    """
    X, names = design_s(d)
    treated = d.treated
    t = d.s[treated]
    alpha, iters, dev = _irls(X[treated], t, names, max_iter, tol)
    eta = X @ alpha
    return LogisticFit(
        alpha=alpha,
        names=tuple(names),
        eta=eta,
        fitted=_probs(eta),
        converged=True,
        iterations=iters,
        deviance=dev,
    )


def omega(d: Dataset, alpha) -> np.ndarray:
    """Per-unit score rows z * (s - p) * [1, xs]; zero rows for controls."""
    X, _ = design_s(d)
    prob = _probs(X @ np.asarray(alpha, dtype=float))
    s_filled = np.where(d.treated, d.s, 0.0)
    return (d.z * (s_filled - prob))[:, None] * X


def bread_a11(d: Dataset, alpha) -> np.ndarray:
    """Derivative of the summed score rows in alpha: -sum_z p(1-p) x x'."""
    X, _ = design_s(d)
    prob = _probs(X @ np.asarray(alpha, dtype=float))
    w = d.z * prob * (1.0 - prob)
    return -(X * w[:, None]).T @ X


def meat_b11(d: Dataset, alpha) -> np.ndarray:
    """Outer-product sum of the score rows over treated units."""
    o = omega(d, alpha)
    return o.T @ o


def auc(scores, labels) -> float:
    """Area under the ROC curve with ties counted one half.

    Equivalent to the probability that a randomly chosen positive outscores
    a randomly chosen negative, ties splitting the credit.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be equal-length vectors")
    if not np.isfinite(scores).all():
        raise DataError("non-finite score")
    if not np.all(np.isin(labels, [0, 1])):
        raise DataError("labels must be 0/1")
    n1 = int(labels.sum())
    n0 = labels.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise DataError("AUC needs both label classes")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def cv_auc(d: Dataset, *, folds: int = 10, seed: int = 0,
           max_iter: int = 50, tol: float = 1e-8) -> float:
    """Cross-validated AUC of the stratum model on the treated arm.

    Units are shuffled into ``folds`` folds with a seeded generator; each
    fold is scored by a model fit on the remaining folds and the per-fold
    AUCs are averaged.  A fold with a single stratum class is an error.
    """
    X, names = design_s(d)
    treated = np.where(d.treated)[0]
    if folds < 2 or folds > treated.size:
        raise DataError(f"folds must be in [2, {treated.size}]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(treated.size)
    assignments = np.arange(treated.size) % folds
    fold_of = np.empty(treated.size, dtype=int)
    fold_of[order] = assignments
    Xt = X[treated]
    t = d.s[treated]
    aucs = []
    for k in range(folds):
        hold = fold_of == k
        t_train, t_hold = t[~hold], t[hold]
        if t_train.min() == t_train.max() or t_hold.min() == t_hold.max():
            raise DataError(f"fold {k} has a single stratum class")
        alpha, _, _ = _irls(Xt[~hold], t_train, names, max_iter, tol)
        aucs.append(auc(_probs(Xt[hold] @ alpha), t_hold))
    return float(np.mean(aucs))


def score_diagnostics(d: Dataset, fit: LogisticFit, *, cv_folds: int | None = None,
                      seed: int = 0) -> ScoreDiagnostics:
    """In-sample AUC, optional CV AUC, and the distinct fitted-value count.

    Fewer than 3 distinct fitted values means the scores carry almost no
    covariate signal; downstream identification leans on that variation, so
    the condition triggers a warning wherever this is computed.
    """
    treated = d.treated
    in_sample = auc(fit.fitted[treated], d.s[treated].astype(int))
    distinct = int(np.unique(np.round(fit.fitted, 10)).size)
    if distinct < 3:
        warnings.warn(
            f"only {distinct} distinct fitted score(s); stratum scores are "
            "nearly constant and the imputed regressor may be uninformative",
            UserWarning,
            stacklevel=2,
        )
    cv = cv_auc(d, folds=cv_folds, seed=seed) if cv_folds else None
    return ScoreDiagnostics(auc=in_sample, cv_auc=cv, distinct_fitted=distinct)
