"""Command-line interface: ``estimate`` on a CSV and ``simulate`` for grids.

Both subcommands write deterministic output: rerunning with the same flags
and seed reproduces the output files byte for byte.  Errors come out as a
single machine-parsable stderr line ``error[code]: message`` with exit
status 1; partial estimator failures exit 2 with the per-item status
recorded in the output.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .comparators import (
    bootstrap_se,
    fit_mixture_em,
    fit_psw,
    mixture_to_json_dict,
    psw_to_json_dict,
)
from .data import ColumnSpec, load_csv
from .errors import DataError, GeepersError
from .estimator import fit_geepers, to_json_dict
from .logistic import fit_logistic, score_diagnostics
from .simulation import (
    ERROR_DISTS,
    ESTIMATORS,
    build_grid,
    coverage_table,
    coverage_grid,
    report_rows,
    run_grid,
    summary_json,
    write_grid_csv,
)


class _CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # Route argparse's own failures through the one-line error format.
    def error(self, message):
        raise _CliError("usage", message)


def _parse_kv_file(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise _CliError("usage", f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                out[key.strip().replace("_", "-")] = value.strip()
    except OSError as exc:
        raise _CliError("io", f"cannot read {path}: {exc}") from None
    return out


def _parse_bool(raw: str, key: str) -> bool:
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "y"):
        return True
    if low in ("0", "false", "no", "n"):
        return False
    raise _CliError("usage", f"{key} must be a yes/no value, got {raw!r}")


def _split_list(raw) -> list[str]:
    if raw is None:
        return []
    if isinstance(raw, (list, tuple)):
        return list(raw)
    return [tok.strip() for tok in str(raw).split(",") if tok.strip()]


def _add_common(p):
    p.add_argument("--seed", type=int, default=None,
                   help="master seed; required on any stochastic path")
    p.add_argument("--out", default=None, help="output file path")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="output format (estimate) or stdout style (simulate)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="geepers",
                     description="Principal-effect estimation and simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit estimators on a CSV dataset",
                         description="Fit the two-stage estimator and/or "
                                     "comparators on one dataset.")
    est.add_argument("--data", help="CSV file with one row per unit")
    est.add_argument("--outcome", help="outcome column")
    est.add_argument("--treatment", help="assignment column (0/1)")
    est.add_argument("--strata", help="take-up column (empty on control rows)")
    est.add_argument("--ps-covars", default=None,
                     help="comma-separated stratum-model covariate columns")
    est.add_argument("--out-covars", default=None,
                     help="comma-separated outcome-model covariate columns")
    est.add_argument("--estimator", default="geepers",
                     choices=("geepers", "psw", "mixture", "all"))
    est.add_argument("--mode", default="plain", choices=("plain", "interactions"))
    est.add_argument("--boot-b", type=int, default=1000,
                     help="bootstrap draws for the weighting estimator")
    est.add_argument("--cluster", default=None,
                     help="cluster-id column for clustered resampling")
    est.add_argument("--missing-token", default="",
                     help="missing-cell token in the CSV (default: empty)")
    est.add_argument("--config", default=None,
                     help="key=value file supplying any of the above")
    _add_common(est)
    # unset sentinels so the config merge can tell an explicit flag from a
    # default; real defaults are applied after the merge
    est.set_defaults(estimator=None, mode=None, boot_b=None,
                     missing_token=None, format=None)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo grid",
                         description="Replicate simulation cells and write "
                                     "tidy metrics plus a JSON summary.")
    sim.add_argument("--grid", default=None, help="key=value grid file")
    sim.add_argument("--full-grid", action="store_true",
                     help="use the full factorial coverage layout")
    sim.add_argument("--n", default=None, help="per-arm sizes, comma-separated")
    sim.add_argument("--alpha", default=None, help="signal strengths, comma-separated")
    sim.add_argument("--errdist", default=None,
                     help=f"residual shapes, comma-separated from {ERROR_DISTS}")
    sim.add_argument("--b1", default=None, help="taker shifts, comma-separated")
    sim.add_argument("--sx-int", default=None, help="stratum-covariate interaction: yes/no list")
    sim.add_argument("--zx-int", default=None, help="assignment-covariate interaction: yes/no list")
    sim.add_argument("--reps", type=int, default=None, help="replications per cell")
    sim.add_argument("--workers", type=int, default=1, help="worker processes")
    sim.add_argument("--estimators", default=",".join(ESTIMATORS),
                     help="subset of estimators to run")
    sim.add_argument("--psw-boot-b", type=int, default=200,
                     help="bootstrap draws per replicate for the weighting estimator")
    sim.add_argument("--mode", default="plain", choices=("plain", "interactions"))
    _add_common(sim)
    return parser


def _merge_config(args) -> None:
    """Fill unset estimate flags from the key=value config file."""
    if not args.config:
        return
    cfg = _parse_kv_file(args.config)
    mapping = {
        "data": "data", "outcome": "outcome", "treatment": "treatment",
        "strata": "strata", "ps-covars": "ps_covars", "out-covars": "out_covars",
        "estimator": "estimator", "mode": "mode", "boot-b": "boot_b",
        "cluster": "cluster", "missing-token": "missing_token", "seed": "seed",
        "out": "out", "format": "format",
    }
    for key, attr in mapping.items():
        if key not in cfg:
            continue
        if getattr(args, attr) is not None:
            continue  # explicit flag wins
        value = cfg[key]
        if attr in ("boot_b", "seed"):
            try:
                value = int(value)
            except ValueError:
                raise _CliError("usage",
                                f"{key} must be an integer, got {value!r}") from None
        setattr(args, attr, value)


_ESTIMATE_DEFAULTS = {"estimator": "geepers", "mode": "plain", "boot_b": 1000,
                      "missing_token": "", "format": "json"}


def _cmd_estimate(args) -> int:
    _merge_config(args)
    for attr, value in _ESTIMATE_DEFAULTS.items():
        if getattr(args, attr) is None:
            setattr(args, attr, value)
    for flag in ("data", "outcome", "treatment", "strata"):
        if getattr(args, flag) is None:
            raise _CliError("usage", f"--{flag} is required")
    if args.estimator not in ("geepers", "psw", "mixture", "all"):
        raise _CliError("usage", f"unknown estimator {args.estimator!r}")
    if args.mode not in ("plain", "interactions"):
        raise _CliError("usage", f"unknown mode {args.mode!r}")
    if args.format not in ("json", "csv"):
        raise _CliError("usage", f"unknown format {args.format!r}")
    stochastic = args.estimator in ("psw", "mixture", "all")
    if stochastic and args.seed is None:
        raise _CliError("usage",
                        f"--seed is required for --estimator {args.estimator}")
    spec = ColumnSpec(
        outcome=args.outcome,
        treatment=args.treatment,
        strata=args.strata,
        ps_covariates=tuple(_split_list(args.ps_covars)),
        outcome_covariates=tuple(_split_list(args.out_covars)),
        cluster=args.cluster,
    )
    d = load_csv(args.data, spec, missing=args.missing_token)
    lf = fit_logistic(d)
    diag = score_diagnostics(d, lf)
    shared_diag = {"auc": diag.auc, "distinct_scores": diag.distinct_fitted,
                   "converged": lf.converged}
    wanted = list(ESTIMATORS) if args.estimator == "all" else [args.estimator]
    results = []
    status = {}
    for name in wanted:
        try:
            if name == "geepers":
                fit = fit_geepers(d, mode=args.mode, logistic_fit=lf)
                results.append(to_json_dict(fit))
            elif name == "psw":
                point = fit_psw(d, lf.fitted)

                def pipeline(dd):
                    f = fit_psw(dd, fit_logistic(dd).fitted)
                    return np.array([f.tau0, f.tau1])

                boot = bootstrap_se(d, pipeline, args.boot_b, seed=args.seed,
                                    cluster=d.cluster)
                cov = float(np.cov(boot.draws[:, 0], boot.draws[:, 1], ddof=1)[0, 1])
                from dataclasses import replace
                point = replace(point, se_tau0=float(boot.se[0]),
                                se_tau1=float(boot.se[1]), cov_tau=cov,
                                n_boot=args.boot_b, cluster_id=args.cluster)
                results.append(psw_to_json_dict(point, alpha=lf.alpha,
                                                diagnostics=shared_diag))
            else:
                fit = fit_mixture_em(d, lf.fitted, seed=args.seed)
                results.append(mixture_to_json_dict(fit, alpha=lf.alpha,
                                                    diagnostics=shared_diag))
            status[name] = "ok"
        except (GeepersError, np.linalg.LinAlgError) as exc:
            status[name] = f"error[fit]: {exc}"
    payload = {
        "schema_version": 1,
        "kind": "estimate",
        "data": {"path": str(args.data), "n": d.n, "n_treated": d.n_treated,
                 "n_control": d.n_control},
        "results": results,
        "status": status,
    }
    text = _render_estimate(payload, args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    _print_estimate_summary(payload)
    return 0 if all(v == "ok" for v in status.values()) else 2


def _render_estimate(payload: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    lines = [",".join(("estimator", "estimand", "estimate", "se", "ci_lo", "ci_hi"))]
    for res in payload["results"]:
        for estimand, point, se in (("tau0", res["tau0"], res["se0"]),
                                    ("tau1", res["tau1"], res["se1"])):
            if se is None:
                cells = [res["estimator"], estimand, repr(point), "", "", ""]
            else:
                cells = [res["estimator"], estimand, repr(point), repr(se),
                         repr(point - 2.0 * se), repr(point + 2.0 * se)]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _print_estimate_summary(payload: dict) -> None:
    print(f"# n={payload['data']['n']} "
          f"(treated {payload['data']['n_treated']}, "
          f"control {payload['data']['n_control']})", file=sys.stderr)
    for res in payload["results"]:
        se0 = "n/a" if res["se0"] is None else f"{res['se0']:.4f}"
        se1 = "n/a" if res["se1"] is None else f"{res['se1']:.4f}"
        print(f"# {res['estimator']:>8}: tau0={res['tau0']:.4f} (se {se0})  "
              f"tau1={res['tau1']:.4f} (se {se1})", file=sys.stderr)
    for name, state in payload["status"].items():
        if state != "ok":
            print(f"# {name:>8}: {state}", file=sys.stderr)


def _grid_values(args) -> dict:
    cfg = _parse_kv_file(args.grid) if args.grid else {}

    def pick(key, flag_value):
        return flag_value if flag_value is not None else cfg.get(key)

    raw = {
        "n": pick("n", args.n),
        "alpha": pick("alpha", args.alpha),
        "errdist": pick("errdist", args.errdist),
        "b1": pick("b1", args.b1),
        "sx-int": pick("sx-int", args.sx_int),
        "zx-int": pick("zx-int", args.zx_int),
    }
    if args.reps is None and "reps" in cfg:
        args.reps = int(cfg["reps"])
    return raw


def _cmd_simulate(args) -> int:
    if args.seed is None:
        raise _CliError("usage", "--seed is required for simulate")
    if args.full_grid:
        if args.reps is None:
            raise _CliError("usage", "--reps is required")
        try:
            n = int(_split_list(args.n)[0]) if args.n else 500
            cells = coverage_grid(master_seed=args.seed, replications=args.reps, n=n)
        except (ValueError, DataError) as exc:
            raise _CliError("usage", f"bad grid value: {exc}") from None
    else:
        raw = _grid_values(args)
        if args.reps is None:
            raise _CliError("usage", "--reps is required")
        missing = [k for k, v in raw.items() if v is None and k in ("n", "alpha")]
        if missing:
            raise _CliError("usage", f"grid values missing for {missing}")
        try:
            cells = build_grid(
                master_seed=args.seed,
                ns=[int(v) for v in _split_list(raw["n"])],
                alphas=[float(v) for v in _split_list(raw["alpha"])],
                error_dists=_split_list(raw["errdist"]) or ["normal"],
                beta1s=[float(v) for v in _split_list(raw["b1"])] or [0.3],
                sx_interactions=[_parse_bool(v, "sx-int") for v in _split_list(raw["sx-int"])] or [False],
                zx_interactions=[_parse_bool(v, "zx-int") for v in _split_list(raw["zx-int"])] or [False],
                replications=args.reps,
            )
        except (ValueError, DataError) as exc:
            raise _CliError("usage", f"bad grid value: {exc}") from None
    estimators = tuple(_split_list(args.estimators))
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise _CliError("usage", f"unknown estimator(s) {sorted(unknown)}")
    reports = run_grid(cells, workers=args.workers, estimators=estimators,
                       mode=args.mode, psw_boot_b=args.psw_boot_b)
    if args.out:
        write_grid_csv(reports, args.out)
        summary_path = os.path.splitext(args.out)[0] + ".summary.json"
        with open(summary_path, "w") as fh:
            json.dump(summary_json(reports), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.format == "json":
        print(json.dumps(summary_json(reports), indent=2, sort_keys=True))
    else:
        table = coverage_table(reports)
        if table is not None:
            print(table)
        else:
            for row in report_rows(reports):
                print(f"n={row['n']} alpha={row['alpha']:g} {row['error_dist']:>7} "
                      f"b1={row['beta1']:g} {row['estimator']:>8} {row['estimand']}: "
                      f"bias={row['bias']:+.4f} empSE={row['emp_se']:.4f} "
                      f"rmse={row['rmse']:.4f} cover={row['coverage']:.3f}")
    failed = sum(sum(rep.failures.values()) for rep in reports)
    return 0 if failed == 0 else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_simulate(args)
    except _CliError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 1
    except GeepersError as exc:
        print(f"error[fit]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
