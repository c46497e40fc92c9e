"""Dataset container, CSV loading, and the imputed stratum regressor.

The data layout is a two-arm randomized study with one-way noncompliance:
treatment take-up S is observed for treated units (z = 1) and structurally
missing for controls (z = 0).  Internally ``s`` is a float vector with NaN
on every control row; that invariant is enforced at construction.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnSpec:
    """Maps analysis roles to CSV column names.

    ``ps_covariates`` feed the stratum-membership model, ``outcome_covariates``
    the outcome regression; the two lists may overlap or coincide.
    """

    outcome: str
    treatment: str
    strata: str
    ps_covariates: tuple[str, ...] = ()
    outcome_covariates: tuple[str, ...] = ()
    cluster: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "ps_covariates", tuple(self.ps_covariates))
        object.__setattr__(self, "outcome_covariates", tuple(self.outcome_covariates))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Validated study data.

    Parameters
    ----------
    y : array of shape (n,)
        Outcome, finite.
    z : array of shape (n,)
        Assignment indicator, 0 or 1; both arms must be non-empty.
    s : array of shape (n,)
        Take-up indicator: 0/1 where ``z == 1``, NaN where ``z == 0``.
        The treated arm must contain both classes.
    xs : array of shape (n, p_s)
        Covariates for the stratum-membership model (no intercept column).
    xy : array of shape (n, p_y)
        Covariates for the outcome regression (no intercept column).
    xs_names, xy_names : tuple of str
        Column names for the two blocks.
    cluster : array of shape (n,), optional
        Cluster identifiers for clustered resampling.
    """

    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    xs: np.ndarray
    xy: np.ndarray
    xs_names: tuple[str, ...] = ()
    xy_names: tuple[str, ...] = ()
    cluster: np.ndarray | None = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z)
        s = np.asarray(self.s, dtype=float)
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        xy = np.atleast_2d(np.asarray(self.xy, dtype=float))
        if y.ndim != 1:
            raise DataError("y must be one-dimensional")
        n = y.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if z.shape != (n,) or s.shape != (n,):
            raise DataError("y, z, s must have equal length")
        zvals = np.unique(z)
        if not np.all(np.isin(zvals, [0, 1])):
            raise DataError(f"z must be 0/1, found values {zvals!r}")
        z = z.astype(int)
        if xs.size == 0:
            xs = np.empty((n, 0))
        if xy.size == 0:
            xy = np.empty((n, 0))
        if xs.shape[0] != n or xy.shape[0] != n:
            raise DataError("covariate blocks must have one row per unit")
        treated = z == 1
        if not treated.any() or treated.all():
            raise DataError("both treatment arms must be non-empty")
        if np.isnan(s[treated]).any():
            bad = np.where(treated & np.isnan(s))[0]
            raise DataError(f"stratum missing for treated unit(s) {bad[:10].tolist()}")
        if not np.isnan(s[~treated]).all():
            bad = np.where(~treated & ~np.isnan(s))[0]
            raise DataError(f"stratum observed for control unit(s) {bad[:10].tolist()}")
        st = s[treated]
        if not np.all(np.isin(st, [0.0, 1.0])):
            raise DataError("observed strata must be 0/1")
        if st.min() == st.max():
            raise DataError("treated arm must contain both stratum classes")
        for name, arr in (("y", y), ("xs", xs), ("xy", xy)):
            if not np.isfinite(arr).all():
                raise DataError(f"non-finite values in {name}")
        xs_names = tuple(self.xs_names) or tuple(f"xs{j}" for j in range(xs.shape[1]))
        xy_names = tuple(self.xy_names) or tuple(f"xy{j}" for j in range(xy.shape[1]))
        if len(xs_names) != xs.shape[1]:
            raise DataError("xs_names does not match xs column count")
        if len(xy_names) != xy.shape[1]:
            raise DataError("xy_names does not match xy column count")
        if len(set(xs_names)) != len(xs_names) or len(set(xy_names)) != len(xy_names):
            raise DataError("covariate names must be unique within a block")
        cluster = self.cluster
        if cluster is not None:
            cluster = np.asarray(cluster)
            if cluster.shape != (n,):
                raise DataError("cluster ids must have one entry per unit")
            cluster = _readonly(cluster)
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "s", _readonly(s))
        object.__setattr__(self, "xs", _readonly(xs))
        object.__setattr__(self, "xy", _readonly(xy))
        object.__setattr__(self, "xs_names", xs_names)
        object.__setattr__(self, "xy_names", xy_names)
        object.__setattr__(self, "cluster", cluster)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def treated(self) -> np.ndarray:
        """Boolean mask of treated units."""
        return self.z == 1

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, rows) -> "Dataset":
        """Row-subset (or resample) of the dataset; invariants re-checked."""
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows],
            z=self.z[rows],
            s=self.s[rows],
            xs=self.xs[rows],
            xy=self.xy[rows],
            xs_names=self.xs_names,
            xy_names=self.xy_names,
            cluster=None if self.cluster is None else self.cluster[rows],
        )


@dataclass(frozen=True)
class ImputedRegressor:
    """Stratum regressor with observed values on treated rows, scores elsewhere.

    ``r[i]`` equals the observed stratum for treated units and the estimated
    stratum probability for controls; ``observed[i]`` records which.
    """

    r: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        observed = np.asarray(self.observed, dtype=bool)
        if r.ndim != 1 or observed.shape != r.shape:
            raise DataError("r and observed must be equal-length vectors")
        if not np.isfinite(r).all():
            raise DataError("non-finite imputed regressor")
        if (r < 0).any() or (r > 1).any():
            raise DataError("imputed regressor outside [0, 1]")
        object.__setattr__(self, "r", _readonly(r))
        object.__setattr__(self, "observed", _readonly(observed))


def build_imputed_regressor(d: Dataset, scores) -> ImputedRegressor:
    """Combine observed strata with estimated scores into one regressor.

    Parameters
    ----------
    d : Dataset
    scores : array of shape (n,)
        Stratum probabilities for every unit, typically ``LogisticFit.fitted``.
        Must lie in [0, 1]; only the control entries are used.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (d.n,):
        raise DataError(
            f"scores length {scores.shape} does not match dataset size {d.n}"
        )
    if not np.isfinite(scores).all():
        raise DataError("non-finite score")
    if (scores < 0).any() or (scores > 1).any():
        raise DataError("score outside [0, 1]")
    observed = d.treated
    r = np.where(observed, d.s, scores)
    return ImputedRegressor(r=r, observed=observed)


def _parse_cell(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"non-numeric value {raw!r} in column {col!r}, data row {row}") from None


def load_csv(path, columns: ColumnSpec, *, missing: str = "") -> Dataset:
    """Load a Dataset from a CSV file.

    Rows with a missing outcome, treatment, covariate, or cluster cell are
    dropped (listwise) and reported through the module logger with their
    1-based data-row indices.  Structural problems are hard errors: a missing
    column, a non-numeric cell, an observed stratum on a control row, a
    missing stratum on a treated row, or an arm/stratum class left empty
    after deletion.

    Parameters
    ----------
    path : str or Path
    columns : ColumnSpec
        Which columns play which role.
    missing : str
        Token marking a missing cell (default: empty string).  The stratum
        cell of every control row must hold exactly this token.

    Returns
    -------
    Dataset
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = [row for row in reader if row]

    header = [h.strip() for h in header]
    needed = [columns.outcome, columns.treatment, columns.strata]
    needed += list(columns.ps_covariates) + list(columns.outcome_covariates)
    if columns.cluster is not None:
        needed.append(columns.cluster)
    index = {}
    absent = []
    for name in needed:
        if name in index:
            continue
        try:
            index[name] = header.index(name)
        except ValueError:
            absent.append(name)
    if absent:
        raise DataError(f"{path}: missing column(s) {absent}")

    covar_names = list(dict.fromkeys(list(columns.ps_covariates) + list(columns.outcome_covariates)))
    y, z, s, cl = [], [], [], []
    covars = {name: [] for name in covar_names}
    dropped = []
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"data row {i} has {len(row)} cells, expected {len(header)}")
        cells = {name: row[j].strip() for name, j in index.items()}
        checked = [columns.outcome, columns.treatment] + covar_names
        if columns.cluster is not None:
            checked.append(columns.cluster)
        if any(cells[name] == missing for name in checked):
            dropped.append(i)
            continue
        zi = _parse_cell(cells[columns.treatment], i, columns.treatment)
        if zi not in (0.0, 1.0):
            raise DataError(f"treatment must be 0/1, got {zi!r} in data row {i}")
        s_raw = cells[columns.strata]
        if zi == 1.0:
            if s_raw == missing:
                raise DataError(f"stratum missing for treated data row {i}")
            si = _parse_cell(s_raw, i, columns.strata)
        else:
            if s_raw != missing:
                raise DataError(
                    f"stratum observed for control data row {i} (expected {missing!r})"
                )
            si = np.nan
        y.append(_parse_cell(cells[columns.outcome], i, columns.outcome))
        z.append(int(zi))
        s.append(si)
        for name in covar_names:
            covars[name].append(_parse_cell(cells[name], i, name))
        if columns.cluster is not None:
            cl.append(cells[columns.cluster])

    if dropped:
        shown = ", ".join(map(str, dropped[:20])) + (", ..." if len(dropped) > 20 else "")
        logger.warning(
            "%s: dropped %d row(s) with missing values (data rows %s)",
            path, len(dropped), shown,
        )
    if not y:
        raise DataError(f"{path}: no usable rows")

    mat = {name: np.asarray(vals) for name, vals in covars.items()}
    xs = (
        np.column_stack([mat[n] for n in columns.ps_covariates])
        if columns.ps_covariates else np.empty((len(y), 0))
    )
    xy = (
        np.column_stack([mat[n] for n in columns.outcome_covariates])
        if columns.outcome_covariates else np.empty((len(y), 0))
    )
    return Dataset(
        y=np.asarray(y),
        z=np.asarray(z),
        s=np.asarray(s),
        xs=xs,
        xy=xy,
        xs_names=columns.ps_covariates,
        xy_names=columns.outcome_covariates,
        cluster=np.asarray(cl) if cl else None,
    )


def save_csv(d: Dataset, path, columns: ColumnSpec | None = None, *, missing: str = "") -> None:
    """Write a Dataset back to CSV so that ``load_csv`` round-trips it exactly.

    Floats are written with ``repr`` so every finite value survives the trip
    bit for bit.  Covariate columns shared between the two blocks are written
    once.
    """
    if columns is None:
        columns = ColumnSpec(
            outcome="y", treatment="z", strata="s",
            ps_covariates=d.xs_names, outcome_covariates=d.xy_names,
            cluster=None if d.cluster is None else "cluster",
        )
    name_to_col: dict[str, np.ndarray] = {}
    for names, block in ((columns.ps_covariates, d.xs), (columns.outcome_covariates, d.xy)):
        for j, name in enumerate(names):
            if name in name_to_col:
                if not np.array_equal(name_to_col[name], block[:, j]):
                    raise DataError(f"column {name!r} differs between covariate blocks")
            else:
                name_to_col[name] = block[:, j]
    header = [columns.outcome, columns.treatment, columns.strata, *name_to_col]
    if columns.cluster is not None:
        header.append(columns.cluster)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(d.n):
            row = [repr(float(d.y[i])), str(int(d.z[i]))]
            row.append(str(int(d.s[i])) if d.z[i] == 1 else missing)
            row.extend(repr(float(col[i])) for col in name_to_col.values())
            if columns.cluster is not None:
                row.append(str(d.cluster[i]))
            writer.writerow(row)
