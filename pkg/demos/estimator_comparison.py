"""
Three estimators, one dataset, and a distributional stress test
===============================================================

The two-stage regression, score weighting with a case bootstrap, and the
EM normal mixture answer the same question from different assumptions.
On a single dataset they roughly agree; a short replication study with
uniform residuals shows where the mixture's normality assumption bites.
"""
import numpy as np

from geepers import (
    SimCell,
    fit_geepers,
    fit_logistic,
    fit_mixture_em,
    psw_with_bootstrap,
    run_cell,
)

# --- one dataset, three answers -------------------------------------------
cell = SimCell(n=500, alpha=0.5, error_dist="normal", beta1=0.3,
               sx_interaction=False, zx_interaction=False,
               replications=1, seed=7)
from geepers import generate
d, truth = generate(cell, 0)
lf = fit_logistic(d)

two_stage = fit_geepers(d, logistic_fit=lf)
weighting = psw_with_bootstrap(d, 300, seed=11)
mixture = fit_mixture_em(d, lf.fitted, seed=11)

print(f"taker effect, truth {truth.tau1:+.3f}:")
for name, tau, se in (("two-stage", two_stage.tau1, two_stage.se_tau1),
                      ("weighting", weighting.tau1, weighting.se_tau1),
                      ("mixture", mixture.tau1, mixture.se_tau1)):
    print(f"  {name:>9}: {tau:+.3f} (se {se:.3f})")

# --- stress test: uniform residuals ---------------------------------------
# The mixture likelihood believes in normal tails.  With uniform residuals
# its intervals stay narrow while its point estimates wander, so coverage
# collapses; the two-stage intervals only rely on moments and hold up.
reps = 100
uniform = SimCell(n=500, alpha=0.5, error_dist="uniform", beta1=0.3,
                  sx_interaction=False, zx_interaction=False,
                  replications=reps, seed=99)
report = run_cell(uniform, estimators=("geepers", "mixture"))
rows = {(r.estimator, r.estimand): r for r in report.rows}

print(f"\nuniform residuals, {reps} replications, taker effect:")
for est in ("geepers", "mixture"):
    row = rows[(est, "tau1")]
    print(f"  {est:>8}: coverage {row.coverage:.2f}, "
          f"rmse {row.rmse:.3f}, median se {row.median_se:.3f}")
print("\nthe mixture's nominal 95% interval covers far less than 95%;")
print("the two-stage sandwich interval does not care about the error shape")
