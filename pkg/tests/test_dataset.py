"""Dataset container, column validation, and CSV round trips."""

import numpy as np
import pytest

from targeted_fx.dataset import (
    Dataset,
    ExtraColumn,
    TreatmentColumn,
    load_csv,
    save_csv,
)
from targeted_fx.errors import DataError


def small_dataset():
    t1 = TreatmentColumn("g1", ("0", "1", "2"), np.array([0, 1, 2, 1, -1, 0]))
    t2 = TreatmentColumn("g2", ("a", "b"), np.array([0, 0, 1, 1, 0, 1]))
    y = np.array([1.0, 2.0, np.nan, 4.0, 5.0, 6.0])
    w = np.array([[0.1, 1.0], [0.2, 2.0], [0.3, 3.0],
                  [np.nan, 4.0], [0.5, 5.0], [0.6, 6.0]])
    extra = ExtraColumn("bmi", "numeric", np.array([20.0, 21.0, 22.0, 23.0, 24.0, np.nan]))
    return Dataset("y", "continuous", y, [t1, t2], ("w1", "w2"), w, [extra])


class TestTreatmentColumn:
    def test_rejects_empty_levels(self):
        with pytest.raises(DataError):
            TreatmentColumn("g", (), np.array([], dtype=np.int32))

    def test_rejects_duplicate_levels(self):
        with pytest.raises(DataError):
            TreatmentColumn("g", ("0", "0"), np.array([0]))

    def test_rejects_out_of_range_codes(self):
        with pytest.raises(DataError):
            TreatmentColumn("g", ("0", "1"), np.array([0, 2]))
        with pytest.raises(DataError):
            TreatmentColumn("g", ("0", "1"), np.array([-2]))

    def test_codes_are_read_only(self):
        col = TreatmentColumn("g", ("0", "1"), np.array([0, 1]))
        with pytest.raises(ValueError):
            col.codes[0] = 1

    def test_index_of_unknown_level(self):
        col = TreatmentColumn("g", ("0", "1"), np.array([0, 1]))
        assert col.index_of("1") == 1
        with pytest.raises(DataError):
            col.index_of("2")


class TestExtraColumn:
    def test_unknown_kind(self):
        with pytest.raises(DataError):
            ExtraColumn("e", "ordinal", np.array([1.0]))

    def test_categorical_codes_within_categories(self):
        with pytest.raises(DataError):
            ExtraColumn("e", "categorical", np.array([0, 2]), ("x", "y"))

    def test_missing_masks(self):
        num = ExtraColumn("e", "numeric", np.array([1.0, np.nan]))
        assert num.missing_mask().tolist() == [False, True]
        cat = ExtraColumn("e", "categorical", np.array([0, -1, 1]), ("x", "y"))
        assert cat.missing_mask().tolist() == [False, True, False]


class TestDataset:
    def test_binary_outcome_values(self):
        with pytest.raises(DataError):
            Dataset("y", "binary", np.array([0.0, 0.5]),
                    [TreatmentColumn("g", ("0", "1"), np.array([0, 1]))])
        ok = Dataset("y", "binary", np.array([0.0, 1.0, np.nan]),
                     [TreatmentColumn("g", ("0", "1"), np.array([0, 1, 0]))])
        assert ok.n == 3

    def test_unknown_outcome_kind(self):
        with pytest.raises(DataError):
            Dataset("y", "count", np.array([1.0]), [])

    def test_duplicate_treatment_names(self):
        cols = [TreatmentColumn("g", ("0", "1"), np.array([0])),
                TreatmentColumn("g", ("0", "1"), np.array([1]))]
        with pytest.raises(DataError):
            Dataset("y", "continuous", np.array([1.0]), cols)

    def test_treatment_length_mismatch(self):
        col = TreatmentColumn("g", ("0", "1"), np.array([0, 1]))
        with pytest.raises(DataError):
            Dataset("y", "continuous", np.array([1.0]), [col])

    def test_covariate_shape_mismatch(self):
        col = TreatmentColumn("g", ("0", "1"), np.array([0, 1]))
        with pytest.raises(DataError):
            Dataset("y", "continuous", np.array([1.0, 2.0]), [col],
                    ("w1", "w2"), np.zeros((2, 1)))

    def test_one_dimensional_covariates_accepted(self):
        col = TreatmentColumn("g", ("0", "1"), np.array([0, 1]))
        data = Dataset("y", "continuous", np.array([1.0, 2.0]), [col],
                       ("w1",), np.array([0.5, 0.6]))
        assert data.covariates.shape == (2, 1)

    def test_column_names_unique_across_roles(self):
        col = TreatmentColumn("y", ("0", "1"), np.array([0]))
        with pytest.raises(DataError):
            Dataset("y", "continuous", np.array([1.0]), [col])

    def test_accessors(self):
        data = small_dataset()
        assert data.treatment_names == ("g1", "g2")
        assert data.levels("g1") == ("0", "1", "2")
        assert data.codes("g2").tolist() == [0, 0, 1, 1, 0, 1]
        with pytest.raises(DataError):
            data.treatment("g3")

    def test_complete_rows(self):
        data = small_dataset()
        # row 2 has missing y, row 3 missing covariate, row 4 missing g1,
        # row 5 missing extra
        assert data.complete_rows(("g1", "g2")).tolist() == [0, 1]
        assert data.complete_rows(("g1", "g2"), include_outcome=False).tolist() == [0, 1, 2]
        assert data.complete_rows(("g1", "g2"), include_outcome=False,
                                  include_extra=False).tolist() == [0, 1, 2, 5]
        assert data.complete_rows((), include_outcome=True,
                                  include_extra=False).tolist() == [0, 1, 4, 5]

    def test_match_mask(self):
        data = small_dataset()
        rows = np.array([0, 1, 2, 3])
        mask = data.match_mask(("g1", "g2"), ("1", "a"), rows)
        assert mask.tolist() == [False, True, False, False]


class TestCsv:
    def test_round_trip(self, tmp_path):
        data = small_dataset()
        path = tmp_path / "data.csv"
        save_csv(data, path)
        back = load_csv(path, "y", "continuous",
                        [("g1", ("0", "1", "2")), ("g2", ("a", "b"))],
                        ("w1", "w2"), [("bmi", "numeric")])
        assert np.array_equal(back.y, data.y, equal_nan=True)
        assert np.array_equal(back.codes("g1"), data.codes("g1"))
        assert np.array_equal(back.codes("g2"), data.codes("g2"))
        assert np.array_equal(back.covariates, data.covariates, equal_nan=True)
        assert np.array_equal(back.extra[0].values, data.extra[0].values,
                              equal_nan=True)

    def test_categorical_extra_round_trip(self, tmp_path):
        col = TreatmentColumn("g", ("0", "1"), np.array([0, 1, 0]))
        cat = ExtraColumn("site", "categorical", np.array([1, -1, 0]), ("lo", "hi"))
        data = Dataset("y", "continuous", np.array([1.0, 2.0, 3.0]), [col],
                       extra=[cat])
        path = tmp_path / "data.csv"
        save_csv(data, path)
        back = load_csv(path, "y", "continuous", [("g", ("0", "1"))], (),
                        [("site", "categorical")])
        got = back.extra[0]
        # categories are collected in order of first appearance
        assert [got.categories[c] if c >= 0 else None for c in got.values] == \
               ["hi", None, "lo"]

    def test_na_tokens(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,g,w\n1.0,0,NA\nNaN,1,0.5\n2.0,NULL,0.7\n")
        data = load_csv(path, "y", "continuous", [("g", ("0", "1"))], ("w",))
        assert np.isnan(data.y[1])
        assert data.codes("g").tolist() == [0, 1, -1]
        assert np.isnan(data.covariates[0, 0])

    def test_undeclared_level_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,g\n1.0,2\n")
        with pytest.raises(DataError):
            load_csv(path, "y", "continuous", [("g", ("0", "1"))], ())

    def test_missing_column(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,g\n1.0,0\n")
        with pytest.raises(DataError):
            load_csv(path, "y", "continuous", [("g", ("0", "1"))], ("w",))

    def test_duplicate_column(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,y\n1.0,2.0\n")
        with pytest.raises(DataError):
            load_csv(path, "y", "continuous", [], ())

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("")
        with pytest.raises(DataError):
            load_csv(path, "y", "continuous", [], ())

    def test_short_rows_read_as_missing(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,g,w\n1.0,0\n2.0,1,0.5\n")
        data = load_csv(path, "y", "continuous", [("g", ("0", "1"))], ("w",))
        assert np.isnan(data.covariates[0, 0])
        assert data.covariates[1, 0] == 0.5

    def test_unparseable_number(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,g\nabc,0\n")
        with pytest.raises(DataError):
            load_csv(path, "y", "continuous", [("g", ("0", "1"))], ())
