"""Principal-effect estimation under one-way noncompliance.

Treatment take-up defines two latent strata (would-be takers and
non-takers); the package estimates the treatment effect within each by
regressing the outcome on a stratum regressor that is observed on the
treated arm and imputed from a logistic score model on the control arm.
Standard errors come from stacking both stages' estimating equations into
one sandwich covariance.  Comparator estimators (score weighting with a
case bootstrap, a normal mixture fit by EM) and a Monte-Carlo harness
round out the toolkit.
"""
from .comparators import (
    BootstrapResult,
    MixtureFit,
    PswFit,
    bootstrap_se,
    fit_mixture_em,
    fit_psw,
    mixture_to_json_dict,
    psw_to_json_dict,
    psw_with_bootstrap,
)
from .data import (
    ColumnSpec,
    Dataset,
    ImputedRegressor,
    build_imputed_regressor,
    load_csv,
    save_csv,
)
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateComponentError,
    GeepersError,
    RankDeficiencyError,
    ResampleError,
    SeparationError,
    SingularVarianceError,
)
from .estimator import (
    Effects,
    GeepersFit,
    RefineResult,
    a21_block,
    extract_effects,
    fd_a21,
    fit_geepers,
    newton_refine,
    sandwich_vcov,
    stacked_sums,
    to_json_dict,
)
from .logistic import (
    LogisticFit,
    ScoreDiagnostics,
    auc,
    bread_a11,
    cv_auc,
    fit_logistic,
    meat_b11,
    omega,
    score_diagnostics,
)
from .ols import (
    OlsFit,
    bread_a22,
    build_design,
    fit_ols,
    imputation_moment_components,
    imputation_moment_means,
    meat_b22,
    psi,
)
from .simulation import (
    MetricRow,
    SimCell,
    SimReport,
    SimTruth,
    build_grid,
    coverage_table,
    generate,
    generate_strata_only,
    coverage_grid,
    run_cell,
    run_grid,
    true_taus,
    write_grid_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult", "MixtureFit", "PswFit", "bootstrap_se", "fit_mixture_em",
    "fit_psw", "mixture_to_json_dict", "psw_to_json_dict", "psw_with_bootstrap",
    "ColumnSpec", "Dataset", "ImputedRegressor", "build_imputed_regressor",
    "load_csv", "save_csv",
    "ConvergenceError", "DataError", "DegenerateComponentError", "GeepersError",
    "RankDeficiencyError", "ResampleError", "SeparationError",
    "SingularVarianceError",
    "Effects", "GeepersFit", "RefineResult", "a21_block", "extract_effects",
    "fd_a21", "fit_geepers", "newton_refine", "sandwich_vcov", "stacked_sums",
    "to_json_dict",
    "LogisticFit", "ScoreDiagnostics", "auc", "bread_a11", "cv_auc",
    "fit_logistic", "meat_b11", "omega", "score_diagnostics",
    "OlsFit", "bread_a22", "build_design", "fit_ols", "imputation_moment_components",
    "imputation_moment_means", "meat_b22", "psi",
    "MetricRow", "SimCell", "SimReport", "SimTruth", "build_grid",
    "coverage_table", "generate", "generate_strata_only", "coverage_grid",
    "run_cell", "run_grid", "true_taus", "write_grid_csv",
    "__version__",
]
