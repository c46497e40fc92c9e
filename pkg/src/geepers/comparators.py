"""Comparator estimators: score weighting and a normal mixture fit by EM.

The weighting estimator reuses the stratum scores as weights on the control
arm and takes plain subgroup means on the treated arm; its uncertainty comes
from a case-resampling bootstrap over the whole pipeline.  The mixture
estimator treats the control arm as a two-component normal regression
mixture with the scores as mixing weights, sharing covariate slopes across
arms, and reads the effects off the component intercepts.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

from .data import Dataset
from .errors import (
    DataError,
    DegenerateComponentError,
    GeepersError,
    ResampleError,
    SingularVarianceError,
)
from .logistic import fit_logistic

_COLLAPSE_FACTOR = 1e-6


def _check_scores(d: Dataset, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (d.n,):
        raise DataError("scores length does not match dataset")
    if not np.isfinite(scores).all():
        raise DataError("non-finite score")
    if (scores < 0).any() or (scores > 1).any():
        raise DataError("score outside [0, 1]")
    return scores


@dataclass(frozen=True)
class PswFit:
    """Score-weighted principal-effect estimates.

    Standard errors are absent until filled in by the bootstrap wrapper.
    ``cluster_id`` records the clustering the bootstrap resampled over.
    """

    mu_c0_w: float
    mu_c1_w: float
    mu_t0: float
    mu_t1: float
    tau0: float
    tau1: float
    se_tau0: float | None = None
    se_tau1: float | None = None
    cov_tau: float | None = None
    n_boot: int | None = None
    cluster_id: str | None = None


def fit_psw(d: Dataset, scores) -> PswFit:
    """Point estimates by score weighting.

    Control-arm stratum means are weighted averages with weights e and
    1 - e; treated-arm means are the observed subgroup means.

    Raises
    ------
    DataError
        If the scores put (numerically) zero mass on either control
        pseudo-stratum.
    """
    e = _check_scores(d, scores)
    control = ~d.treated
    yc = d.y[control]
    ec = e[control]
    w1 = ec.sum()
    w0 = (1.0 - ec).sum()
    if min(w0, w1) <= 1e-12:
        raise DataError("zero weight mass in a control pseudo-stratum")
    mu_c1 = float((yc * ec).sum() / w1)
    mu_c0 = float((yc * (1.0 - ec)).sum() / w0)
    taker = d.treated & (d.s == 1.0)
    nontaker = d.treated & (d.s == 0.0)
    mu_t1 = float(d.y[taker].mean())
    mu_t0 = float(d.y[nontaker].mean())
    return PswFit(
        mu_c0_w=mu_c0,
        mu_c1_w=mu_c1,
        mu_t0=mu_t0,
        mu_t1=mu_t1,
        tau0=mu_t0 - mu_c0,
        tau1=mu_t1 - mu_c1,
    )


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap spread of an estimator: per-draw statistics and their SDs."""

    se: np.ndarray
    draws: np.ndarray
    failures: int
    b: int


def _resample_rows(d: Dataset, rng, cluster) -> np.ndarray:
    if cluster is None:
        return rng.integers(0, d.n, size=d.n)
    ids = np.unique(cluster)
    picked = ids[rng.integers(0, ids.size, size=ids.size)]
    members = {cid: np.where(cluster == cid)[0] for cid in ids}
    return np.concatenate([members[cid] for cid in picked])


def bootstrap_se(d: Dataset, estimator, b: int = 1000, *, seed: int,
                 cluster=None) -> BootstrapResult:
    """Case-resampling bootstrap standard errors for any dataset statistic.

    Parameters
    ----------
    d : Dataset
    estimator : callable
        Maps a Dataset to a vector of statistics; it is re-run on every
        resample, so any internal model fitting is resampled too.
    b : int
        Number of bootstrap draws (at least 2).
    seed : int
        Required; every draw gets its own generator derived from
        (seed, draw, attempt), so results do not depend on scheduling.
    cluster : array of shape (n,), optional
        Resample whole clusters instead of rows.

    Notes
    -----
    Resamples the estimator rejects (for example a draw missing a stratum
    class) are redrawn; after ``b`` total failures the bootstrap aborts
    with ResampleError.
    """
    if b < 2:
        raise DataError(f"bootstrap needs b >= 2, got {b}")
    if cluster is not None:
        cluster = np.asarray(cluster)
        if cluster.shape != (d.n,):
            raise DataError("cluster ids must have one entry per unit")
    draws = []
    failures = 0
    for j in range(b):
        attempt = 0
        while True:
            rng = np.random.default_rng(np.random.SeedSequence((seed, j, attempt)))
            rows = _resample_rows(d, rng, cluster)
            try:
                stat = np.atleast_1d(np.asarray(estimator(d.subset(rows)), dtype=float))
                break
            except (GeepersError, np.linalg.LinAlgError):
                failures += 1
                if failures >= b:
                    raise ResampleError(
                        f"{failures} failed resamples (cap {b}); data too fragile "
                        "for the case bootstrap"
                    ) from None
                attempt += 1
        draws.append(stat)
    draws = np.vstack(draws)
    return BootstrapResult(
        se=draws.std(axis=0, ddof=1),
        draws=draws,
        failures=failures,
        b=b,
    )


def psw_with_bootstrap(d: Dataset, b: int = 1000, *, seed: int,
                       cluster=None, cluster_id: str | None = None) -> PswFit:
    """Score weighting with bootstrap SEs over the full pipeline.

    Each resample refits the stratum model before weighting, so the SEs
    include score-estimation noise.
    """
    fit = fit_psw(d, fit_logistic(d).fitted)

    def pipeline(dd: Dataset) -> np.ndarray:
        f = fit_psw(dd, fit_logistic(dd).fitted)
        return np.array([f.tau0, f.tau1])

    boot = bootstrap_se(d, pipeline, b, seed=seed, cluster=cluster)
    cov = float(np.cov(boot.draws[:, 0], boot.draws[:, 1], ddof=1)[0, 1])
    return replace(
        fit,
        se_tau0=float(boot.se[0]),
        se_tau1=float(boot.se[1]),
        cov_tau=cov,
        n_boot=b,
        cluster_id=cluster_id,
    )


@dataclass(frozen=True)
class MixtureFit:
    """Normal mixture-of-regressions fit with score mixing weights.

    ``gamma`` is shared across arms; residual scale varies by arm, not by
    stratum.  ``vcov`` covers (beta0_t, beta1_t, beta0_c, beta1_c, gamma,
    log sigma_t, log sigma_c) from the observed information.
    """

    beta0_t: float
    beta1_t: float
    beta0_c: float
    beta1_c: float
    gamma: np.ndarray
    sigma_t: float
    sigma_c: float
    tau0: float
    tau1: float
    se_tau0: float
    se_tau1: float
    cov_tau: float
    vcov: np.ndarray
    loglik: float
    loglik_trace: tuple
    converged: bool
    iterations: int
    restarts_collapsed: int


def _mixture_loglik(theta, y, z, s_filled, X, e, n_gamma):
    b0t, b1t, b0c, b1c = theta[:4]
    gamma = theta[4:4 + n_gamma]
    sig_t = np.exp(theta[4 + n_gamma])
    sig_c = np.exp(theta[5 + n_gamma])
    base = X @ gamma if n_gamma else np.zeros_like(y)
    treated = z == 1
    rt = y[treated] - b0t - b1t * s_filled[treated] - base[treated]
    ll_t = -0.5 * np.sum(rt * rt) / sig_t**2 - treated.sum() * np.log(sig_t)
    r0 = y[~treated] - b0c - base[~treated]
    r1 = r0 - b1c
    ec = e[~treated]
    lp0 = -0.5 * (r0 / sig_c) ** 2 - np.log(sig_c)
    lp1 = -0.5 * (r1 / sig_c) ** 2 - np.log(sig_c)
    with np.errstate(divide="ignore"):
        a0 = np.log1p(-ec) + lp0
        a1 = np.log(ec) + lp1
    hi = np.maximum(a0, a1)
    ll_c = np.sum(hi + np.log(np.exp(a0 - hi) + np.exp(a1 - hi)))
    const = -0.5 * y.size * np.log(2.0 * np.pi)
    return ll_t + ll_c + const


def fit_mixture_em(d: Dataset, scores, *, max_iter: int = 500, tol: float = 1e-8,
                   restarts: int = 5, seed: int = 0) -> MixtureFit:
    """Fit the mixture model by EM with seeded restarts.

    Parameters
    ----------
    d : Dataset
    scores : array of shape (n,)
        Stratum probabilities; the control entries are the mixing weights.
    max_iter : int
        EM iteration budget per restart.
    tol : float
        Stop when the log-likelihood moves by less than this.
    restarts : int
        The first restart starts from responsibilities equal to the scores;
        the rest jitter them.  Best final log-likelihood wins.
    seed : int
        Seeds the restart jitter.

    Raises
    ------
    DegenerateComponentError
        If a control pseudo-stratum has no weight, or every restart
        collapses a component scale to zero.
    """
    e = _check_scores(d, scores)
    treated = d.treated
    control = ~treated
    n_c = int(control.sum())
    ec = e[control]
    if min(ec.sum(), (1.0 - ec).sum()) <= 1e-8:
        side = 1 if ec.sum() <= 1e-8 else 0
        raise DegenerateComponentError(
            f"control component {side} has zero prior mass under the scores"
        )
    y = d.y
    X = d.xy
    n_gamma = X.shape[1]
    s_filled = np.where(treated, d.s, 0.0)
    y_sd = float(y.std()) or 1.0
    collapse_at = _COLLAPSE_FACTOR * y_sd

    # Augmented least-squares frame: treated rows once, control rows once per
    # component.  Only the weights change across EM iterations.
    ti = np.where(treated)[0]
    ci = np.where(control)[0]
    k = 4 + n_gamma
    D = np.zeros((ti.size + 2 * ci.size, k))
    D[:ti.size, 0] = 1.0
    D[:ti.size, 1] = s_filled[ti]
    D[ti.size:, 2] = 1.0
    D[ti.size + ci.size:, 3] = 1.0
    if n_gamma:
        D[:ti.size, 4:] = X[ti]
        D[ti.size:ti.size + ci.size, 4:] = X[ci]
        D[ti.size + ci.size:, 4:] = X[ci]
    y_aug = np.concatenate([y[ti], y[ci], y[ci]])

    ec_clipped = np.clip(ec, 1e-6, 1.0 - 1e-6)
    best = None
    collapsed = 0
    for restart in range(restarts):
        if restart == 0:
            w = ec.copy()
        else:
            rng = np.random.default_rng(np.random.SeedSequence((seed, restart)))
            w = expit(logit(ec_clipped) + rng.normal(0.0, 1.0, size=n_c))
        sig_t = sig_c = y_sd
        trace = []
        theta = None
        converged = False
        iterations = 0
        dead = False
        for it in range(1, max_iter + 1):
            # M-step: weighted LS for the means, then the scales.
            wts = np.concatenate([
                np.full(ti.size, 1.0 / sig_t**2),
                (1.0 - w) / sig_c**2,
                w / sig_c**2,
            ])
            G = (D * wts[:, None]).T @ D
            rhs = D.T @ (wts * y_aug)
            try:
                coef = np.linalg.solve(G, rhs)
            except np.linalg.LinAlgError:
                dead = True
                break
            base = X @ coef[4:] if n_gamma else np.zeros(d.n)
            rt = y[ti] - coef[0] - coef[1] * s_filled[ti] - base[ti]
            r0 = y[ci] - coef[2] - base[ci]
            r1 = r0 - coef[3]
            sig_t = float(np.sqrt(np.mean(rt * rt)))
            sig_c = float(np.sqrt(np.mean((1.0 - w) * r0 * r0 + w * r1 * r1)))
            if sig_t < collapse_at or sig_c < collapse_at:
                dead = True
                break
            theta = np.concatenate([coef, [np.log(sig_t), np.log(sig_c)]])
            ll = _mixture_loglik(theta, y, d.z, s_filled, X, e, n_gamma)
            trace.append(ll)
            iterations = it
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
                converged = True
                break
            # E-step: responsibilities of the taker component.
            lp0 = -0.5 * (r0 / sig_c) ** 2
            lp1 = -0.5 * (r1 / sig_c) ** 2
            with np.errstate(divide="ignore"):
                w = expit(np.log(ec_clipped) - np.log1p(-ec_clipped) + lp1 - lp0)
            w = np.where(ec <= 0.0, 0.0, np.where(ec >= 1.0, 1.0, w))
        if dead or theta is None:
            collapsed += 1
            continue
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], theta, tuple(trace), converged, iterations)
    if best is None:
        raise DegenerateComponentError(
            f"all {restarts} restart(s) collapsed a mixture component"
        )
    ll, theta, trace, converged, iterations = best

    vcov = _observed_info_vcov(theta, y, d.z, s_filled, X, e, n_gamma)
    c0 = np.zeros(theta.size)
    c1 = np.zeros(theta.size)
    c0[[0, 2]] = (1.0, -1.0)
    c1[[0, 1, 2, 3]] = (1.0, 1.0, -1.0, -1.0)
    return MixtureFit(
        beta0_t=float(theta[0]),
        beta1_t=float(theta[1]),
        beta0_c=float(theta[2]),
        beta1_c=float(theta[3]),
        gamma=theta[4:4 + n_gamma].copy(),
        sigma_t=float(np.exp(theta[4 + n_gamma])),
        sigma_c=float(np.exp(theta[5 + n_gamma])),
        tau0=float(c0 @ theta),
        tau1=float(c1 @ theta),
        se_tau0=float(np.sqrt(c0 @ vcov @ c0)),
        se_tau1=float(np.sqrt(c1 @ vcov @ c1)),
        cov_tau=float(c0 @ vcov @ c1),
        vcov=vcov,
        loglik=float(ll),
        loglik_trace=trace,
        converged=converged,
        iterations=iterations,
        restarts_collapsed=collapsed,
    )


def _observed_info_vcov(theta, y, z, s_filled, X, e, n_gamma):
    """Covariance from a finite-difference observed information matrix."""
    k = theta.size
    h = 1e-5 * np.maximum(1.0, np.abs(theta))

    def f(t):
        return _mixture_loglik(t, y, z, s_filled, X, e, n_gamma)

    H = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (
                f(theta + ei + ej) - f(theta + ei - ej)
                - f(theta - ei + ej) + f(theta - ei - ej)
            ) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    info = -H
    try:
        vcov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularVarianceError("observed information is singular") from None
    if (np.diag(vcov) < -1e-8).any():
        raise SingularVarianceError("observed information is not positive definite")
    return 0.5 * (vcov + vcov.T)


def psw_to_json_dict(fit: PswFit, *, alpha=(), diagnostics=None) -> dict:
    """Serialize in the shared result schema, tagged with the estimator name."""
    se0 = fit.se_tau0
    se1 = fit.se_tau1
    cov = fit.cov_tau
    vcov = None
    if se0 is not None:
        vcov = [[se0 * se0, cov], [cov, se1 * se1]]
    return {
        "schema_version": 1,
        "estimator": "psw",
        "mode": "plain",
        "tau0": fit.tau0,
        "tau1": fit.tau1,
        "se0": se0,
        "se1": se1,
        "cov01": cov,
        "alpha": [float(a) for a in alpha],
        "beta": [fit.mu_c0_w, fit.mu_c1_w, fit.mu_t0, fit.mu_t1],
        "vcov": vcov,
        "diagnostics": dict(diagnostics or {}, n_boot=fit.n_boot, cluster=fit.cluster_id),
    }


def mixture_to_json_dict(fit: MixtureFit, *, alpha=(), diagnostics=None) -> dict:
    """Serialize in the shared result schema, tagged with the estimator name."""
    beta = [fit.beta0_t, fit.beta1_t, fit.beta0_c, fit.beta1_c, *fit.gamma,
            fit.sigma_t, fit.sigma_c]
    return {
        "schema_version": 1,
        "estimator": "mixture",
        "mode": "plain",
        "tau0": fit.tau0,
        "tau1": fit.tau1,
        "se0": fit.se_tau0,
        "se1": fit.se_tau1,
        "cov01": fit.cov_tau,
        "alpha": [float(a) for a in alpha],
        "beta": [float(b) for b in beta],
        "vcov": [[float(v) for v in row] for row in fit.vcov],
        "diagnostics": dict(
            diagnostics or {},
            converged=fit.converged,
            loglik=fit.loglik,
            iterations=fit.iterations,
            restarts_collapsed=fit.restarts_collapsed,
        ),
    }
