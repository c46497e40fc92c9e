"""Monte-Carlo harness: data generation, per-cell replication, grid runs.

Each cell describes a factorial design point: arm size, stratum-model
signal strength, residual shape, taker outcome shift, and whether the
covariates interact with take-up or assignment.  Three covariates drive
stratum membership but only the first two are exposed to the estimators,
so the fitted score model is informative yet deliberately incomplete.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .comparators import fit_mixture_em, fit_psw, bootstrap_se
from .data import Dataset
from .errors import DataError, GeepersError
from .estimator import fit_geepers
from .logistic import auc, fit_logistic

logger = logging.getLogger(__name__)

_SQRT6 = np.sqrt(6.0)
ERROR_DISTS = ("normal", "uniform")
ESTIMATORS = ("geepers", "mixture", "psw")

# Half width of the centered uniform residual with variance 1/2.
_UNIFORM_HALF_WIDTH = _SQRT6 / 2.0


@dataclass(frozen=True)
class SimCell:
    """One design point of the simulation grid.

    ``n`` is the size of each arm.  ``alpha`` scales the stratum-model
    signal; ``beta1`` is the control-arm taker shift (the treated taker
    shift is 0.3 - beta1, so the taker effect is 0.3 - beta1 and the
    non-taker effect is zero when assignment does not interact with the
    covariates).
    """

    n: int
    alpha: float
    error_dist: str
    beta1: float
    sx_interaction: bool
    zx_interaction: bool
    replications: int
    seed: int

    def __post_init__(self):
        if self.n < 2:
            raise DataError("cell needs at least 2 units per arm")
        if self.alpha < 0:
            raise DataError("alpha must be non-negative")
        if self.error_dist not in ERROR_DISTS:
            raise DataError(f"error_dist must be one of {ERROR_DISTS}")
        if self.replications < 1:
            raise DataError("replications must be positive")


@dataclass(frozen=True)
class SimTruth:
    """Latent side of one generated replicate plus the cell-level effects."""

    s_latent: np.ndarray
    x3: np.ndarray
    e_true: np.ndarray
    y_treated: np.ndarray
    y_control: np.ndarray
    tau0: float
    tau1: float


def _coefficients(cell: SimCell) -> tuple[float, float, float, float]:
    """Covariate slopes (shared, taker-extra, assigned-extra) and taker shift."""
    if cell.sx_interaction:
        g1 = 3.0 / (4.0 * _SQRT6)
        g2 = 1.0 / (2.0 * _SQRT6)
    else:
        g1 = 1.0 / _SQRT6
        g2 = 0.0
    g3 = 1.0 / (2.0 * _SQRT6) if cell.zx_interaction else 0.0
    return g1, g2, g3, 0.3 - cell.beta1


def _draw_errors(rng, dist: str, size: int) -> np.ndarray:
    # Both shapes have variance exactly 1/2.
    if dist == "normal":
        return rng.normal(0.0, np.sqrt(0.5), size)
    if dist == "uniform":
        return rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size)
    raise DataError(f"error_dist must be one of {ERROR_DISTS}")


@lru_cache(maxsize=None)
def _interaction_moments(alpha_key: float) -> tuple[float, float]:
    """Covariate-sum means within each stratum, by large Monte Carlo.

    Returns (E[x1+x2 | S=0], E[x1+x2 | S=1]) computed over 1e7 draws with
    stratum membership averaged out analytically (weights e and 1-e), which
    removes the binomial noise.  Cached per alpha.  By the symmetry
    (x1, x2, x3) -> (-x2, -x1, x3) both moments are exactly zero; the Monte
    Carlo evaluation stands on its own and the tests check the agreement.
    """
    rng = np.random.default_rng(np.random.SeedSequence((987654321, int(round(alpha_key * 1e9)))))
    total = 10_000_000
    chunk = 1_000_000
    s_e = s_x12e = s_x12 = 0.0
    done = 0
    while done < total:
        m = min(chunk, total - done)
        x = rng.standard_normal((m, 3))
        e = expit(alpha_key * (x[:, 0] - x[:, 1] + x[:, 2]))
        x12 = x[:, 0] + x[:, 1]
        s_e += float(e.sum())
        s_x12e += float((x12 * e).sum())
        s_x12 += float(x12.sum())
        done += m
    m1 = s_x12e / s_e
    m0 = (s_x12 - s_x12e) / (total - s_e)
    return m0, m1


def true_taus(cell: SimCell) -> tuple[float, float]:
    """True principal effects for a cell.

    Without an assignment-by-covariate interaction these are exactly
    (0, 0.3 - beta1); with one, the covariate contribution is integrated
    over each stratum by the cached Monte-Carlo oracle.
    """
    _, _, g3, b3 = _coefficients(cell)
    if g3 == 0.0:
        return 0.0, b3
    m0, m1 = _interaction_moments(round(float(cell.alpha), 12))
    return g3 * m0, b3 + g3 * m1


def _rng_for(cell: SimCell, replicate: int, stream: int = 0):
    return np.random.default_rng(np.random.SeedSequence((cell.seed, replicate, stream)))


def _seed_for(cell: SimCell, replicate: int, stream: int) -> int:
    return int(np.random.SeedSequence((cell.seed, replicate, stream)).generate_state(1)[0])


def generate(cell: SimCell, replicate: int) -> tuple[Dataset, SimTruth]:
    """Draw one replicate: exactly ``n`` units per arm.

    The returned Dataset exposes x1, x2 to both model stages; x3 stays in
    SimTruth, so part of the stratum signal is unobservable to the fitted
    score model.
    """
    rng = _rng_for(cell, replicate)
    m = 2 * cell.n
    x = rng.standard_normal((m, 3))
    e = expit(cell.alpha * (x[:, 0] - x[:, 1] + x[:, 2]))
    s = (rng.random(m) < e).astype(float)
    z = np.zeros(m, dtype=int)
    z[rng.permutation(m)[:cell.n]] = 1
    eps = _draw_errors(rng, cell.error_dist, m)
    g1, g2, g3, b3 = _coefficients(cell)
    x12 = x[:, 0] + x[:, 1]
    y_control = cell.beta1 * s + (g1 + g2 * s) * x12 + x[:, 2] / _SQRT6 + eps
    y_treated = y_control + b3 * s + g3 * x12
    y = np.where(z == 1, y_treated, y_control)
    d = Dataset(
        y=y,
        z=z,
        s=np.where(z == 1, s, np.nan),
        xs=x[:, :2],
        xy=x[:, :2],
        xs_names=("x1", "x2"),
        xy_names=("x1", "x2"),
    )
    tau0, tau1 = true_taus(cell)
    truth = SimTruth(
        s_latent=s,
        x3=x[:, 2].copy(),
        e_true=e,
        y_treated=y_treated,
        y_control=y_control,
        tau0=tau0,
        tau1=tau1,
    )
    return d, truth


def generate_strata_only(cell: SimCell, replicate: int) -> tuple[Dataset, SimTruth]:
    """Replicate whose outcome depends on stratum and assignment only.

    Covariates drive stratum membership exactly as in ``generate`` but do
    not enter the outcome, so the outcome-versus-score conditional
    independence behind the moment identities holds by construction.  All
    three covariates are exposed.  The stratum-by-arm means are
    (0, beta1, 0, beta1 + (0.3 - beta1)) for (c0, c1, t0, t1).
    """
    rng = _rng_for(cell, replicate)
    m = 2 * cell.n
    x = rng.standard_normal((m, 3))
    e = expit(cell.alpha * (x[:, 0] - x[:, 1] + x[:, 2]))
    s = (rng.random(m) < e).astype(float)
    z = np.zeros(m, dtype=int)
    z[rng.permutation(m)[:cell.n]] = 1
    eps = _draw_errors(rng, cell.error_dist, m)
    b3 = 0.3 - cell.beta1
    y_control = cell.beta1 * s + eps
    y_treated = y_control + b3 * s
    y = np.where(z == 1, y_treated, y_control)
    names = ("x1", "x2", "x3")
    d = Dataset(
        y=y,
        z=z,
        s=np.where(z == 1, s, np.nan),
        xs=x,
        xy=x,
        xs_names=names,
        xy_names=names,
    )
    truth = SimTruth(
        s_latent=s,
        x3=x[:, 2].copy(),
        e_true=e,
        y_treated=y_treated,
        y_control=y_control,
        tau0=0.0,
        tau1=b3,
    )
    return d, truth


@dataclass(frozen=True)
class MetricRow:
    """Aggregated performance of one estimator for one estimand in one cell."""

    estimator: str
    estimand: str
    true_value: float
    n_used: int
    bias: float
    emp_se: float
    rmse: float
    coverage: float
    median_se: float


@dataclass(frozen=True)
class SimReport:
    """Everything measured in one cell."""

    cell: SimCell
    rows: tuple[MetricRow, ...]
    mean_auc: float
    failures: dict
    draws: dict | None = None


def _aggregate(name: str, estimand: str, true_value: float,
               est: np.ndarray, se: np.ndarray) -> MetricRow:
    ok = np.isfinite(est) & np.isfinite(se)
    est = est[ok]
    se = se[ok]
    bias = float(est.mean() - true_value)
    emp = float(est.std(ddof=0))
    rmse = float(np.sqrt(np.mean((est - true_value) ** 2)))
    hits = np.abs(est - true_value) <= 2.0 * se
    return MetricRow(
        estimator=name,
        estimand=estimand,
        true_value=float(true_value),
        n_used=int(ok.sum()),
        bias=bias,
        emp_se=emp,
        rmse=rmse,
        coverage=float(hits.mean()),
        median_se=float(np.median(se)),
    )


def run_cell(cell: SimCell, *, estimators=ESTIMATORS, mode: str = "plain",
             psw_boot_b: int = 200, keep_draws: bool = False) -> SimReport:
    """Replicate a cell and aggregate bias, spread, RMSE, and coverage.

    Intervals are point +/- 2 SE throughout.  Replicates where generation
    or an estimator fails are excluded from that estimator's aggregates and
    counted in ``failures``.
    """
    estimators = tuple(estimators)
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise DataError(f"unknown estimator(s) {sorted(unknown)}")
    R = cell.replications
    store = {name: np.full((R, 4), np.nan) for name in estimators}
    aucs = np.full(R, np.nan)
    failures = {"generate": 0, **{name: 0 for name in estimators}}
    for rep in range(R):
        try:
            d, truth = generate(cell, rep)
            lf = fit_logistic(d)
        except (GeepersError, np.linalg.LinAlgError) as exc:
            failures["generate"] += 1
            logger.debug("cell %s rep %d: generation/score fit failed: %s",
                         cell, rep, exc)
            continue
        tmask = d.treated
        aucs[rep] = auc(lf.fitted[tmask], d.s[tmask].astype(int))
        for name in estimators:
            try:
                if name == "geepers":
                    f = fit_geepers(d, mode=mode, logistic_fit=lf)
                    row = (f.tau0, f.se_tau0, f.tau1, f.se_tau1)
                elif name == "mixture":
                    f = fit_mixture_em(d, lf.fitted, seed=_seed_for(cell, rep, 101))
                    row = (f.tau0, f.se_tau0, f.tau1, f.se_tau1)
                else:
                    pf = fit_psw(d, lf.fitted)

                    def pipeline(dd: Dataset) -> np.ndarray:
                        ff = fit_psw(dd, fit_logistic(dd).fitted)
                        return np.array([ff.tau0, ff.tau1])

                    boot = bootstrap_se(d, pipeline, psw_boot_b,
                                        seed=_seed_for(cell, rep, 102))
                    row = (pf.tau0, float(boot.se[0]), pf.tau1, float(boot.se[1]))
                store[name][rep] = row
            except (GeepersError, np.linalg.LinAlgError) as exc:
                failures[name] += 1
                logger.debug("cell %s rep %d: %s failed: %s", cell, rep, name, exc)
    total_failed = sum(failures.values())
    if total_failed:
        logger.warning("cell (n=%d, alpha=%g, %s): %d failure(s): %s",
                       cell.n, cell.alpha, cell.error_dist, total_failed, failures)
    tau0, tau1 = true_taus(cell)
    rows = []
    for name in estimators:
        arr = store[name]
        rows.append(_aggregate(name, "tau0", tau0, arr[:, 0], arr[:, 1]))
        rows.append(_aggregate(name, "tau1", tau1, arr[:, 2], arr[:, 3]))
    return SimReport(
        cell=cell,
        rows=tuple(rows),
        mean_auc=float(np.nanmean(aucs)) if np.isfinite(aucs).any() else float("nan"),
        failures=failures,
        draws=store if keep_draws else None,
    )


def _run_cell_args(args) -> SimReport:
    cell, kwargs = args
    return run_cell(cell, **kwargs)


def run_grid(cells, *, workers: int = 1, estimators=ESTIMATORS,
             mode: str = "plain", psw_boot_b: int = 200) -> list[SimReport]:
    """Run every cell, optionally across processes.

    Each cell's randomness is fully determined by its own seed, so the
    results are identical for any worker count.
    """
    cells = list(cells)
    kwargs = dict(estimators=tuple(estimators), mode=mode, psw_boot_b=psw_boot_b)
    if workers <= 1 or len(cells) <= 1:
        return [run_cell(c, **kwargs) for c in cells]
    import multiprocessing

    with multiprocessing.Pool(min(workers, len(cells))) as pool:
        return pool.map(_run_cell_args, [(c, kwargs) for c in cells])


def build_grid(*, master_seed: int, ns, alphas, error_dists, beta1s,
               sx_interactions, zx_interactions, replications: int) -> list[SimCell]:
    """Cross the factor lists into cells with per-cell child seeds."""
    combos = list(itertools.product(ns, alphas, error_dists, beta1s,
                                    sx_interactions, zx_interactions))
    if not combos:
        raise DataError("empty simulation grid")
    seeds = np.random.SeedSequence(master_seed).generate_state(len(combos), dtype=np.uint64)
    cells = []
    for (n, a, dist, b1, sx, zx), s in zip(combos, seeds):
        cells.append(SimCell(
            n=int(n),
            alpha=float(a),
            error_dist=str(dist),
            beta1=float(b1),
            sx_interaction=bool(sx),
            zx_interaction=bool(zx),
            replications=int(replications),
            seed=int(s),
        ))
    return cells


def coverage_grid(*, master_seed: int, replications: int, n: int = 500,
               alphas=(0.0, 0.2, 0.5)) -> list[SimCell]:
    """The full factorial coverage layout: both residual shapes, both
    interaction switches, both taker shifts, three signal strengths."""
    return build_grid(
        master_seed=master_seed,
        ns=[n],
        alphas=list(alphas),
        error_dists=list(ERROR_DISTS),
        beta1s=[0.0, 0.3],
        sx_interactions=[False, True],
        zx_interactions=[False, True],
        replications=replications,
    )


CSV_COLUMNS = (
    "n", "alpha", "error_dist", "beta1", "sx_interaction", "zx_interaction",
    "replications", "seed", "estimator", "estimand", "true_value", "n_used",
    "bias", "emp_se", "rmse", "coverage", "median_se", "mean_auc", "failures",
)


def report_rows(reports) -> list[dict]:
    """Tidy one-row-per-metric view of a list of reports."""
    out = []
    for rep in reports:
        c = rep.cell
        for row in rep.rows:
            out.append({
                "n": c.n,
                "alpha": c.alpha,
                "error_dist": c.error_dist,
                "beta1": c.beta1,
                "sx_interaction": int(c.sx_interaction),
                "zx_interaction": int(c.zx_interaction),
                "replications": c.replications,
                "seed": c.seed,
                "estimator": row.estimator,
                "estimand": row.estimand,
                "true_value": row.true_value,
                "n_used": row.n_used,
                "bias": row.bias,
                "emp_se": row.emp_se,
                "rmse": row.rmse,
                "coverage": row.coverage,
                "median_se": row.median_se,
                "mean_auc": rep.mean_auc,
                "failures": sum(rep.failures.values()),
            })
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_grid_csv(reports, path) -> None:
    """Write the tidy metric rows; float cells use repr for byte stability."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report_rows(reports):
            writer.writerow([_fmt(row[k]) for k in CSV_COLUMNS])


def summary_json(reports) -> dict:
    """JSON-ready grid summary."""
    return {
        "schema_version": 1,
        "kind": "simulation-summary",
        "cells": len(list(reports)),
        "rows": report_rows(reports),
    }


def coverage_table(reports) -> str | None:
    """Coverage pivot in the factorial layout, or None if the grid is partial.

    Requires a complete cross of (error_dist, beta1, sx, zx) with at least
    two signal strengths and both the two-stage and mixture estimators;
    prints one row per (distribution, beta1, interactions, estimand) with a
    coverage column per (alpha, estimator).
    """
    reports = list(reports)
    key_rows = {}
    alphas = sorted({r.cell.alpha for r in reports})
    combos = {(r.cell.error_dist, r.cell.beta1, r.cell.zx_interaction,
               r.cell.sx_interaction) for r in reports}
    estimators = ("geepers", "mixture")
    if len(alphas) < 2:
        return None
    want = {(d, b1, zx, sx) for d in ERROR_DISTS for b1 in {r.cell.beta1 for r in reports}
            for zx in (False, True) for sx in (False, True)}
    if combos != want:
        return None
    for rep in reports:
        present = {row.estimator for row in rep.rows}
        if not set(estimators) <= present:
            return None
        for row in rep.rows:
            if row.estimator not in estimators:
                continue
            key = (rep.cell.error_dist, rep.cell.beta1,
                   rep.cell.zx_interaction, rep.cell.sx_interaction, row.estimand)
            key_rows.setdefault(key, {})[(rep.cell.alpha, row.estimator)] = row.coverage
    header = ["dist", "b1", "zx", "sx", "estimand"]
    for a in alphas:
        for est in estimators:
            header.append(f"a={a:g}:{est}")
    lines = ["  ".join(f"{h:>12}" for h in header)]
    for dist in ERROR_DISTS:
        for b1 in sorted({k[1] for k in key_rows}):
            for zx in (False, True):
                for sx in (False, True):
                    for estimand in ("tau0", "tau1"):
                        key = (dist, b1, zx, sx, estimand)
                        if key not in key_rows:
                            return None
                        cells = key_rows[key]
                        vals = [dist, f"{b1:g}", "yes" if zx else "no",
                                "yes" if sx else "no", estimand]
                        for a in alphas:
                            for est in estimators:
                                if (a, est) not in cells:
                                    return None
                                vals.append(f"{cells[(a, est)]:.3f}")
                        lines.append("  ".join(f"{v:>12}" for v in vals))
    return "\n".join(lines)
