"""Dataset validation, imputed-regressor construction, and CSV round trips."""
import logging

import numpy as np
import pytest

from geepers import (
    ColumnSpec,
    DataError,
    Dataset,
    ImputedRegressor,
    build_imputed_regressor,
    load_csv,
    save_csv,
)


def small_dataset(**overrides):
    base = dict(
        y=np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        z=np.array([1, 1, 1, 0, 0, 0]),
        s=np.array([1.0, 0.0, 1.0, np.nan, np.nan, np.nan]),
        xs=np.array([[0.1], [0.2], [0.3], [0.4], [0.5], [0.6]]),
        xy=np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]]),
        xs_names=("a",),
        xy_names=("b",),
    )
    base.update(overrides)
    return Dataset(**base)


class TestColumnSpec:
    def test_covariate_lists_coerced_to_tuples(self):
        spec = ColumnSpec(outcome="y", treatment="z", strata="s",
                          ps_covariates=["a", "b"], outcome_covariates=["c"])
        assert spec.ps_covariates == ("a", "b")
        assert spec.outcome_covariates == ("c",)
        assert spec.cluster is None


class TestDataset:
    def test_valid_construction_and_counts(self):
        d = small_dataset()
        assert d.n == 6
        assert d.n_treated == 3
        assert d.n_control == 3
        np.testing.assert_array_equal(d.treated, [True] * 3 + [False] * 3)

    def test_arrays_are_readonly(self):
        d = small_dataset()
        with pytest.raises(ValueError):
            d.y[0] = 99.0
        with pytest.raises(ValueError):
            d.xs[0, 0] = 99.0

    def test_default_covariate_names(self):
        d = small_dataset(xs_names=(), xy_names=())
        assert d.xs_names == ("xs0",)
        assert d.xy_names == ("xy0",)

    def test_empty_covariate_blocks_allowed(self):
        d = small_dataset(xs=np.empty((6, 0)), xy=np.empty((6, 0)),
                          xs_names=(), xy_names=())
        assert d.xs.shape == (6, 0)
        assert d.xy.shape == (6, 0)

    def test_rejects_bad_treatment_values(self):
        with pytest.raises(DataError, match="0/1"):
            small_dataset(z=np.array([1, 1, 2, 0, 0, 0]))

    def test_rejects_single_arm(self):
        with pytest.raises(DataError, match="arms"):
            small_dataset(z=np.ones(6, dtype=int),
                          s=np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0]))

    def test_rejects_missing_stratum_on_treated(self):
        with pytest.raises(DataError, match="missing for treated"):
            small_dataset(s=np.array([1.0, np.nan, 1.0, np.nan, np.nan, np.nan]))

    def test_rejects_observed_stratum_on_control(self):
        with pytest.raises(DataError, match="observed for control"):
            small_dataset(s=np.array([1.0, 0.0, 1.0, 0.0, np.nan, np.nan]))

    def test_rejects_one_class_treated_arm(self):
        with pytest.raises(DataError, match="both stratum classes"):
            small_dataset(s=np.array([1.0, 1.0, 1.0, np.nan, np.nan, np.nan]))

    def test_rejects_non_binary_strata(self):
        with pytest.raises(DataError, match="0/1"):
            small_dataset(s=np.array([1.0, 0.5, 0.0, np.nan, np.nan, np.nan]))

    def test_rejects_non_finite_outcome(self):
        with pytest.raises(DataError, match="non-finite"):
            small_dataset(y=np.array([1.0, np.inf, 3.0, 4.0, 5.0, 6.0]))

    def test_rejects_name_count_mismatch(self):
        with pytest.raises(DataError, match="xs_names"):
            small_dataset(xs_names=("a", "extra"))

    def test_rejects_duplicate_names_within_block(self):
        with pytest.raises(DataError, match="unique"):
            small_dataset(xs=np.ones((6, 2)), xs_names=("a", "a"))

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            Dataset(y=np.array([]), z=np.array([]), s=np.array([]),
                    xs=np.empty((0, 0)), xy=np.empty((0, 0)))

    def test_cluster_length_checked(self):
        with pytest.raises(DataError, match="cluster"):
            small_dataset(cluster=np.array([1, 2]))

    def test_subset_reindexes_and_revalidates(self):
        d = small_dataset(cluster=np.array(list("aabbcc")))
        sub = d.subset([0, 1, 3, 4])
        assert sub.n == 4
        np.testing.assert_array_equal(sub.y, [1.0, 2.0, 4.0, 5.0])
        assert list(sub.cluster) == ["a", "a", "b", "c"]
        # dropping every control row breaks the two-arm invariant
        with pytest.raises(DataError):
            d.subset([0, 1, 2])


class TestImputedRegressor:
    def test_combines_observed_and_scores(self):
        d = small_dataset()
        scores = np.array([0.9, 0.9, 0.9, 0.2, 0.4, 0.6])
        reg = build_imputed_regressor(d, scores)
        np.testing.assert_array_equal(reg.r, [1.0, 0.0, 1.0, 0.2, 0.4, 0.6])
        np.testing.assert_array_equal(reg.observed, d.treated)

    def test_score_length_checked(self):
        with pytest.raises(DataError, match="length"):
            build_imputed_regressor(small_dataset(), np.array([0.5, 0.5]))

    def test_score_range_checked(self):
        d = small_dataset()
        with pytest.raises(DataError, match="outside"):
            build_imputed_regressor(d, np.array([0.5, 0.5, 0.5, 0.5, 0.5, 1.2]))
        with pytest.raises(DataError, match="non-finite"):
            build_imputed_regressor(d, np.array([0.5, 0.5, 0.5, 0.5, 0.5, np.nan]))

    def test_direct_construction_validates(self):
        with pytest.raises(DataError, match="outside"):
            ImputedRegressor(r=np.array([0.5, -0.1]),
                             observed=np.array([True, False]))


SPEC = ColumnSpec(outcome="y", treatment="z", strata="s",
                  ps_covariates=("a",), outcome_covariates=("b",))


def write_csv(path, rows, header="y,z,s,a,b"):
    path.write_text("\n".join([header, *rows]) + "\n")


class TestLoadCsv:
    def test_basic_load(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0", "2.5,1,0,0.2,3.0",
                      "3.5,0,,0.3,4.0", "4.5,0,,0.4,5.0"])
        d = load_csv(f, SPEC)
        assert d.n == 4
        np.testing.assert_array_equal(d.y, [1.5, 2.5, 3.5, 4.5])
        np.testing.assert_array_equal(d.z, [1, 1, 0, 0])
        assert np.isnan(d.s[2]) and d.s[0] == 1.0
        np.testing.assert_array_equal(d.xs[:, 0], [0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(d.xy[:, 0], [2.0, 3.0, 4.0, 5.0])

    def test_missing_cells_drop_rows_with_log(self, tmp_path, caplog):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0", ",1,0,0.2,3.0", "2.5,1,0,0.2,3.0",
                      "3.5,0,,0.3,", "4.5,0,,0.4,5.0", "5.5,0,,0.5,6.0"])
        with caplog.at_level(logging.WARNING, logger="geepers.data"):
            d = load_csv(f, SPEC)
        assert d.n == 4
        assert "dropped 2 row(s)" in caplog.text
        assert "2, 4" in caplog.text  # 1-based data-row indices

    def test_custom_missing_token(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0", "2.5,1,0,0.2,3.0",
                      "3.5,0,NA,0.3,4.0", "4.5,0,NA,0.4,5.0"])
        d = load_csv(f, SPEC, missing="NA")
        assert d.n == 4

    def test_missing_column_is_hard_error(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1"], header="y,z,s,a")
        with pytest.raises(DataError, match=r"missing column\(s\) \['b'\]"):
            load_csv(f, SPEC)

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0", "oops,1,0,0.2,3.0",
                      "3.5,0,,0.3,4.0", "4.5,0,,0.4,5.0"])
        with pytest.raises(DataError, match="'oops' in column 'y', data row 2"):
            load_csv(f, SPEC)

    def test_stratum_on_control_row_is_hard_error(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0", "2.5,1,0,0.2,3.0",
                      "3.5,0,1,0.3,4.0", "4.5,0,,0.4,5.0"])
        with pytest.raises(DataError, match="observed for control data row 3"):
            load_csv(f, SPEC)

    def test_missing_stratum_on_treated_row_is_hard_error(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,,0.1,2.0", "2.5,1,0,0.2,3.0", "3.5,0,,0.3,4.0"])
        with pytest.raises(DataError, match="stratum missing for treated data row 1"):
            load_csv(f, SPEC)

    def test_bad_treatment_value(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,3,1,0.1,2.0", "2.5,1,0,0.2,3.0", "3.5,0,,0.3,4.0"])
        with pytest.raises(DataError, match="treatment must be 0/1"):
            load_csv(f, SPEC)

    def test_ragged_row_is_hard_error(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0", "2.5,1,0,0.2"])
        with pytest.raises(DataError, match="data row 2 has 4 cells"):
            load_csv(f, SPEC)

    def test_empty_file(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_csv(f, SPEC)

    def test_cluster_column_loaded_as_strings(self, tmp_path):
        f = tmp_path / "d.csv"
        write_csv(f, ["1.5,1,1,0.1,2.0,u1", "2.5,1,0,0.2,3.0,u1",
                      "3.5,0,,0.3,4.0,u2", "4.0,0,,0.3,4.0,u2"],
                  header="y,z,s,a,b,school")
        spec = ColumnSpec(outcome="y", treatment="z", strata="s",
                          ps_covariates=("a",), outcome_covariates=("b",),
                          cluster="school")
        d = load_csv(f, spec)
        assert list(d.cluster) == ["u1", "u1", "u2", "u2"]


class TestSaveCsv:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        n = 40
        z = np.array([1] * 20 + [0] * 20)
        s = np.where(z == 1, (rng.random(n) < 0.5).astype(float), np.nan)
        if s[z == 1].min() == s[z == 1].max():  # pragma: no cover
            s[0] = 1.0 - s[0]
        d = Dataset(
            y=rng.normal(size=n) * np.pi,
            z=z,
            s=s,
            xs=rng.normal(size=(n, 2)) / 3.0,
            xy=rng.normal(size=(n, 2)) / 7.0,
            xs_names=("x1", "x2"),
            xy_names=("w1", "w2"),
        )
        f = tmp_path / "round.csv"
        save_csv(d, f)
        back = load_csv(
            f,
            ColumnSpec(outcome="y", treatment="z", strata="s",
                       ps_covariates=("x1", "x2"), outcome_covariates=("w1", "w2")),
        )
        np.testing.assert_array_equal(back.y, d.y)
        np.testing.assert_array_equal(back.z, d.z)
        np.testing.assert_array_equal(back.s[back.z == 1], d.s[d.z == 1])
        np.testing.assert_array_equal(back.xs, d.xs)
        np.testing.assert_array_equal(back.xy, d.xy)

    def test_shared_covariate_columns_written_once(self, tmp_path):
        d = small_dataset(xy=np.array([[0.1], [0.2], [0.3], [0.4], [0.5], [0.6]]),
                          xy_names=("a",))
        f = tmp_path / "shared.csv"
        save_csv(d, f)
        header = f.read_text().splitlines()[0].split(",")
        assert header == ["y", "z", "s", "a"]
        back = load_csv(f, ColumnSpec(outcome="y", treatment="z", strata="s",
                                      ps_covariates=("a",), outcome_covariates=("a",)))
        np.testing.assert_array_equal(back.xs, back.xy)

    def test_conflicting_shared_name_rejected(self, tmp_path):
        d = small_dataset(xy_names=("a",))  # same name, different values
        with pytest.raises(DataError, match="differs between"):
            save_csv(d, tmp_path / "x.csv")
