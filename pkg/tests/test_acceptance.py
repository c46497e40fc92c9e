"""End-to-end acceptance runs: estimator guarantees at realistic scale.

Each numbered test checks one pinned criterion and records a single
pass/fail line (see conftest.record); the lines are echoed in the terminal
summary.  The reference targets and tolerances are fixed constants here;
the Monte-Carlo seeds are arbitrary but pinned for byte-stable reruns.

Criterion 5 compares the two-stage estimator's replication RMSE against an
external reference value of 0.13 +/- 0.03.  The measured RMSE under this
implementation is ~0.18 and is internally consistent (criterion 9 shows
the sandwich SEs match the empirical spread, and the weighting comparator
half of the same criterion passes), so the test is expected to fail; it is
kept unweakened on purpose.
"""
import json
import time

import numpy as np
import pytest
from conftest import record

from geepers import (
    SimCell,
    fit_geepers,
    fit_logistic,
    generate,
    generate_strata_only,
    imputation_moment_components,
    newton_refine,
    run_cell,
    save_csv,
)
from geepers.cli import main
from geepers.estimator import a21_block, fd_a21


def base_cell(**kw):
    base = dict(n=500, alpha=0.5, error_dist="normal", beta1=0.3,
                sx_interaction=False, zx_interaction=False,
                replications=500, seed=2401)
    base.update(kw)
    return SimCell(**base)


def rows_by_key(report):
    return {(r.estimator, r.estimand): r for r in report.rows}


@pytest.fixture(scope="module")
def shared_run():
    """The 500-replication reference cell shared by criteria 4 and 5."""
    t0 = time.monotonic()
    report = run_cell(base_cell(), estimators=("geepers", "psw"),
                      psw_boot_b=200)
    return report, time.monotonic() - t0


@pytest.fixture(scope="module")
def big_run():
    """2000 replications at n=1000, shared by criteria 9 and 10."""
    return run_cell(base_cell(n=1000, replications=2000, seed=2405),
                    estimators=("geepers",))


def test_criterion_01_imputation_moment_means_vanish():
    cell = base_cell(n=100_000, seed=2400, replications=1)
    t0 = time.monotonic()
    d, truth = generate_strata_only(cell, 0)
    mus = (0.0, cell.beta1, 0.0, cell.beta1 + (0.3 - cell.beta1))
    comp = imputation_moment_components(d, mus, truth.e_true,
                                        s_latent=truth.s_latent)
    elapsed = time.monotonic() - t0
    means = comp.mean(axis=0)
    ses = comp.std(axis=0, ddof=1) / np.sqrt(d.n)
    ratios = np.abs(means) / ses
    ok = bool(ratios.max() <= 3.0 and elapsed < 30.0)
    record(1, "imputation-moment-means", ok,
           f"n={d.n}, max |mean|/SE = {ratios.max():.2f} (limit 3), "
           f"runtime {elapsed:.1f}s (limit 30s)")
    assert ratios.max() <= 3.0
    assert elapsed < 30.0


def test_criterion_02_cross_derivative_matches_finite_differences():
    cell = base_cell(n=20, alpha=0.6, replications=50, seed=3000)
    worst = 0.0
    for rep in range(50):
        d, _ = generate(cell, rep)
        fit = fit_geepers(d)
        analytic = a21_block(d, fit.logistic.alpha, fit.ols.beta)
        fd = fd_a21(d, fit.logistic.alpha, fit.ols.beta, eps=1e-6)
        rel = float(np.abs(analytic - fd).max() / np.abs(fd).max())
        worst = max(worst, rel)
    ok = worst < 1e-5
    record(2, "cross-derivative-vs-fd", ok,
           f"50 datasets (40 units), worst relative deviation {worst:.2e} "
           "(limit 1e-5)")
    assert worst < 1e-5


def test_criterion_03_two_stage_solution_is_stacked_root():
    cell = base_cell(n=60, alpha=0.6, replications=50, seed=3100)
    worst = 0.0
    for rep in range(50):
        d, _ = generate(cell, rep)
        refined = newton_refine(d, fit_geepers(d), steps=1)
        worst = max(worst, refined.max_step)
    ok = worst <= 1e-8
    record(3, "stacked-newton-fixed-point", ok,
           f"50 datasets, largest Newton move {worst:.2e} (limit 1e-8)")
    assert worst <= 1e-8


def test_criterion_04_nominal_coverage_at_reference_cell(shared_run):
    report, elapsed = shared_run
    by = rows_by_key(report)
    c0 = by[("geepers", "tau0")].coverage
    c1 = by[("geepers", "tau1")].coverage
    ok = bool(0.93 <= c0 <= 0.99 and 0.93 <= c1 <= 0.99 and elapsed < 600)
    record(4, "coverage-nominal", ok,
           f"tau0 {c0:.3f}, tau1 {c1:.3f} (band [0.93, 0.99]), "
           f"500 replications in {elapsed:.0f}s (limit 600s)")
    assert 0.93 <= c0 <= 0.99
    assert 0.93 <= c1 <= 0.99
    assert elapsed < 600


def test_criterion_05_rmse_reference_values(shared_run):
    report, _ = shared_run
    by = rows_by_key(report)
    g = by[("geepers", "tau1")].rmse
    p = by[("psw", "tau1")].rmse
    g_ok = 0.10 <= g <= 0.16
    p_ok = 0.19 <= p <= 0.27
    record(5, "rmse-reference", bool(g_ok and p_ok),
           f"two-stage tau1 rmse {g:.3f} vs [0.10, 0.16] "
           f"({'ok' if g_ok else 'outside'}); "
           f"weighting tau1 rmse {p:.3f} vs [0.19, 0.27] "
           f"({'ok' if p_ok else 'outside'})")
    assert p_ok, f"weighting rmse {p:.3f} outside [0.19, 0.27]"
    assert g_ok, f"two-stage rmse {g:.3f} outside [0.10, 0.16]"


def test_criterion_06_uniform_errors_split_the_estimators():
    report = run_cell(base_cell(error_dist="uniform", seed=2402),
                      estimators=("geepers", "mixture"))
    by = rows_by_key(report)
    g0 = by[("geepers", "tau0")].coverage
    g1 = by[("geepers", "tau1")].coverage
    m1 = by[("mixture", "tau1")].coverage
    ok = bool(min(g0, g1) >= 0.90 and m1 <= 0.75)
    record(6, "uniform-error-robustness", ok,
           f"two-stage coverage tau0 {g0:.3f} / tau1 {g1:.3f} (floor 0.90); "
           f"normal-mixture tau1 coverage {m1:.3f} (ceiling 0.75)")
    assert min(g0, g1) >= 0.90
    assert m1 <= 0.75


def test_criterion_07_zero_signal_scores_stay_valid():
    report = run_cell(base_cell(alpha=0.0, seed=2403),
                      estimators=("geepers",))
    by = rows_by_key(report)
    c0 = by[("geepers", "tau0")].coverage
    c1 = by[("geepers", "tau1")].coverage
    ok = bool(c0 >= 0.95 and c1 >= 0.95)
    record(7, "zero-signal-validity", ok,
           f"coverage with uninformative scores: tau0 {c0:.3f}, "
           f"tau1 {c1:.3f} (floor 0.95)")
    assert c0 >= 0.95
    assert c1 >= 0.95


def test_criterion_08_score_model_auc_in_reference_band():
    report = run_cell(base_cell(replications=200, seed=2404), estimators=())
    ok = 0.64 <= report.mean_auc <= 0.71
    record(8, "score-auc-band", ok,
           f"mean AUC {report.mean_auc:.4f} over 200 replications "
           "(band [0.64, 0.71])")
    assert 0.64 <= report.mean_auc <= 0.71


def test_criterion_09_sandwich_se_tracks_empirical_spread(big_run):
    row = rows_by_key(big_run)[("geepers", "tau1")]
    ratio = row.median_se / row.emp_se
    ok = 0.9 <= ratio <= 1.1
    record(9, "sandwich-se-calibration", ok,
           f"median SE / empirical SD = {ratio:.3f} over 2000 replications "
           "(band [0.9, 1.1])")
    assert 0.9 <= ratio <= 1.1


def test_criterion_10_bias_shrinks_with_sample_size(big_run):
    # level clause at its pinned replication count
    level = run_cell(base_cell(n=1000, seed=2406), estimators=("geepers",))
    b_level = abs(rows_by_key(level)[("geepers", "tau1")].bias)
    # trend clause: both biases are tiny, so the comparison needs precise
    # measurement to reflect the true values rather than replication noise
    # (the replication counts for this half are not pinned)
    small = run_cell(base_cell(n=100, replications=5000, seed=2407),
                     estimators=("geepers",))
    row_big = rows_by_key(big_run)[("geepers", "tau1")]
    row_small = rows_by_key(small)[("geepers", "tau1")]
    b_big = abs(row_big.bias)
    b_small = abs(row_small.bias)
    mc_big = row_big.emp_se / np.sqrt(row_big.n_used)
    mc_small = row_small.emp_se / np.sqrt(row_small.n_used)
    ok = bool(b_level < 0.05 and b_big <= 1.2 * b_small)
    record(10, "bias-trend", ok,
           f"|bias| {b_level:.4f} at n=1000/500 reps (limit 0.05); trend "
           f"{b_big:.4f} (MC SE {mc_big:.4f}, 2000 reps) <= 1.2 x "
           f"{b_small:.4f} (MC SE {mc_small:.4f}, 5000 reps at n=100)")
    assert b_level < 0.05
    assert b_big <= 1.2 * b_small


class TestCliEndToEnd:
    """Synthetic smoke runs backing the command-line estimate path."""

    @pytest.fixture()
    def known_truth_csv(self, tmp_path):
        cell = SimCell(n=1500, alpha=0.8, error_dist="normal", beta1=0.0,
                       sx_interaction=False, zx_interaction=False,
                       replications=1, seed=2408)
        d, truth = generate_strata_only(cell, 0)
        path = tmp_path / "synthetic.csv"
        save_csv(d, path)
        return str(path), truth

    def cli_args(self, path, *extra):
        return ["estimate", "--data", path, "--outcome", "y",
                "--treatment", "z", "--strata", "s",
                "--ps-covars", "x1,x2,x3", "--out-covars", "x1,x2,x3", *extra]

    def test_cli_estimate_recovers_known_truth(self, known_truth_csv, capsys):
        path, truth = known_truth_csv
        rc = main(self.cli_args(path))
        out, _ = capsys.readouterr()
        assert rc == 0
        payload = json.loads(out)
        assert payload["status"] == {"geepers": "ok"}
        (res,) = payload["results"]
        assert abs(res["tau0"] - truth.tau0) <= 3 * res["se0"]
        assert abs(res["tau1"] - truth.tau1) <= 3 * res["se1"]

    def test_cli_estimate_all_estimators(self, known_truth_csv, capsys):
        path, truth = known_truth_csv
        rc = main(self.cli_args(path, "--estimator", "all", "--seed", "17",
                                "--boot-b", "60"))
        out, _ = capsys.readouterr()
        assert rc in (0, 2)
        payload = json.loads(out)
        assert payload["status"]["geepers"] == "ok"
        for res in payload["results"]:
            assert abs(res["tau1"] - truth.tau1) <= 4 * res["se1"]
