"""Observational dataset with declared column roles.

A dataset couples an outcome column with one or more discrete treatment
columns (ordered level sets), numeric adjustment covariates, and optional
extra covariates that only the outcome regression sees.  Missing values
are tolerated on input; estimation routines select complete rows per
estimand and report how many rows were excluded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NA_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "NULL", "null", "None"})

OUTCOME_KINDS = ("continuous", "binary")
EXTRA_KINDS = ("numeric", "categorical")


@dataclass(frozen=True)
class TreatmentColumn:
    """A discrete treatment with a declared, ordered set of levels.

    ``codes`` holds the per-row level index into ``levels``; missing
    entries are coded -1.
    """

    name: str
    levels: tuple[str, ...]
    codes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.levels) < 1:
            raise DataError(f"treatment {self.name!r} declares no levels")
        if len(set(self.levels)) != len(self.levels):
            raise DataError(f"treatment {self.name!r} has duplicate levels")
        codes = np.asarray(self.codes, dtype=np.int32)
        if codes.ndim != 1:
            raise DataError(f"treatment {self.name!r} codes must be 1-dimensional")
        if codes.size and (codes.max() >= len(self.levels) or codes.min() < -1):
            raise DataError(f"treatment {self.name!r} has codes outside the declared levels")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    def index_of(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise DataError(
                f"level {level!r} is not declared for treatment {self.name!r}; "
                f"declared levels are {list(self.levels)}"
            ) from None


@dataclass(frozen=True)
class ExtraColumn:
    """Outcome-regression-only covariate, numeric or categorical.

    Numeric columns store float values with NaN for missing.  Categorical
    columns store integer codes with -1 for missing plus the category list.
    """

    name: str
    kind: str
    values: np.ndarray = field(repr=False)
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in EXTRA_KINDS:
            raise DataError(f"extra covariate {self.name!r} has unknown kind {self.kind!r}")
        if self.kind == "numeric":
            values = np.asarray(self.values, dtype=np.float64)
        else:
            values = np.asarray(self.values, dtype=np.int32)
            if values.size and self.categories and values.max() >= len(self.categories):
                raise DataError(f"extra covariate {self.name!r} has codes outside its categories")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def missing_mask(self) -> np.ndarray:
        if self.kind == "numeric":
            return ~np.isfinite(self.values)
        return self.values < 0


class Dataset:
    """Immutable container for one analysis dataset.

    Parameters
    ----------
    outcome_name : str
        Name of the outcome column.
    outcome_kind : str
        Either ``"continuous"`` or ``"binary"``.  Binary outcomes must take
        values in {0, 1} wherever observed.
    y : array-like
        Outcome values, NaN for missing.
    treatments : sequence of TreatmentColumn
        Discrete treatments in declaration order.
    covariate_names : sequence of str
        Names of the numeric adjustment covariates.
    covariates : array-like of shape (n, len(covariate_names))
        Covariate values, NaN for missing.
    extra : sequence of ExtraColumn, optional
        Covariates used only by the outcome regression.
    """

    def __init__(self, outcome_name, outcome_kind, y, treatments,
                 covariate_names=(), covariates=None, extra=()):
        if outcome_kind not in OUTCOME_KINDS:
            raise DataError(f"unknown outcome kind {outcome_kind!r}")
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1:
            raise DataError("outcome must be a 1-dimensional array")
        n = y.shape[0]
        if outcome_kind == "binary":
            observed = y[np.isfinite(y)]
            if observed.size and not np.all(np.isin(observed, (0.0, 1.0))):
                raise DataError("binary outcome values must lie in {0, 1}")
        y.setflags(write=False)

        self.outcome_name = str(outcome_name)
        self.outcome_kind = outcome_kind
        self.y = y
        self.n = n

        self._treatments: dict[str, TreatmentColumn] = {}
        for col in treatments:
            if col.codes.shape[0] != n:
                raise DataError(f"treatment {col.name!r} has {col.codes.shape[0]} rows, expected {n}")
            if col.name in self._treatments:
                raise DataError(f"duplicate treatment column {col.name!r}")
            self._treatments[col.name] = col

        covariate_names = tuple(str(c) for c in covariate_names)
        if covariates is None:
            covariates = np.empty((n, 0), dtype=np.float64)
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if covariates.shape != (n, len(covariate_names)):
            raise DataError(
                f"covariate matrix has shape {covariates.shape}, "
                f"expected ({n}, {len(covariate_names)})"
            )
        covariates = covariates.copy()
        covariates.setflags(write=False)
        self.covariate_names = covariate_names
        self.covariates = covariates

        self.extra = tuple(extra)
        for col in self.extra:
            if col.values.shape[0] != n:
                raise DataError(f"extra covariate {col.name!r} has wrong length")

        names = ([self.outcome_name] + list(self._treatments) +
                 list(covariate_names) + [c.name for c in self.extra])
        if len(set(names)) != len(names):
            raise DataError("column names must be unique across all roles")

    @property
    def treatment_names(self) -> tuple[str, ...]:
        return tuple(self._treatments)

    def treatment(self, name: str) -> TreatmentColumn:
        try:
            return self._treatments[name]
        except KeyError:
            raise DataError(f"no treatment column named {name!r}") from None

    def levels(self, name: str) -> tuple[str, ...]:
        return self.treatment(name).levels

    def codes(self, name: str) -> np.ndarray:
        return self.treatment(name).codes

    def complete_rows(self, treatment_names, include_outcome: bool = True,
                      include_extra: bool = True) -> np.ndarray:
        """Indices of rows with no missing value in the referenced columns.

        The adjustment covariates are always required.  Propensity fitting
        passes ``include_outcome=False, include_extra=False`` because it
        never looks at the outcome side.
        """
        ok = np.ones(self.n, dtype=bool)
        if include_outcome:
            ok &= np.isfinite(self.y)
        for name in treatment_names:
            ok &= self.treatment(name).codes >= 0
        if self.covariates.shape[1]:
            ok &= np.all(np.isfinite(self.covariates), axis=1)
        if include_extra:
            for col in self.extra:
                ok &= ~col.missing_mask()
        return np.flatnonzero(ok)

    def match_mask(self, treatment_names, levels, rows) -> np.ndarray:
        """Boolean mask over ``rows`` where every named treatment equals the given level."""
        mask = np.ones(len(rows), dtype=bool)
        for name, level in zip(treatment_names, levels):
            col = self.treatment(name)
            mask &= col.codes[rows] == col.index_of(level)
        return mask


def _parse_float(token: str) -> float:
    if token in NA_TOKENS:
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise DataError(f"could not parse {token!r} as a number") from None


def load_csv(path, outcome_name, outcome_kind, treatments, covariate_names,
             extra_covariates=()) -> Dataset:
    """Load a dataset from a CSV file with a header row.

    Parameters
    ----------
    treatments : sequence of (name, levels) pairs
        Declared level order for each treatment column.  Cell values not in
        the declared set and not an NA token are an error.
    extra_covariates : sequence of (name, kind) pairs
        ``kind`` is ``"numeric"`` or ``"categorical"``.  Categories of a
        categorical column are collected from the file in order of first
        appearance.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    index = {}
    for i, name in enumerate(header):
        if name in index:
            raise DataError(f"{path}: duplicate column {name!r}")
        index[name] = i

    def column(name):
        if name not in index:
            raise DataError(f"{path}: no column named {name!r}")
        j = index[name]
        return [row[j].strip() if j < len(row) else "" for row in rows]

    y = np.array([_parse_float(tok) for tok in column(outcome_name)])

    treatment_cols = []
    for name, levels in treatments:
        levels = tuple(str(l) for l in levels)
        lookup = {level: i for i, level in enumerate(levels)}
        codes = np.empty(len(rows), dtype=np.int32)
        for i, tok in enumerate(column(name)):
            if tok in NA_TOKENS:
                codes[i] = -1
            elif tok in lookup:
                codes[i] = lookup[tok]
            else:
                raise DataError(
                    f"{path}: value {tok!r} in column {name!r} is not a declared level"
                )
        treatment_cols.append(TreatmentColumn(name, levels, codes))

    if covariate_names:
        cov = np.array([[_parse_float(tok) for tok in column(name)]
                        for name in covariate_names], dtype=np.float64).T
    else:
        cov = np.empty((len(rows), 0))

    extra_cols = []
    for name, kind in extra_covariates:
        toks = column(name)
        if kind == "numeric":
            values = np.array([_parse_float(tok) for tok in toks])
            extra_cols.append(ExtraColumn(name, "numeric", values))
        elif kind == "categorical":
            categories: list[str] = []
            seen = {}
            codes = np.empty(len(toks), dtype=np.int32)
            for i, tok in enumerate(toks):
                if tok in NA_TOKENS:
                    codes[i] = -1
                    continue
                if tok not in seen:
                    seen[tok] = len(categories)
                    categories.append(tok)
                codes[i] = seen[tok]
            extra_cols.append(ExtraColumn(name, "categorical", codes, tuple(categories)))
        else:
            raise DataError(f"extra covariate {name!r} has unknown kind {kind!r}")

    return Dataset(outcome_name, outcome_kind, y, treatment_cols,
                   covariate_names, cov, extra_cols)


def save_csv(data: Dataset, path) -> None:
    """Write a dataset back to CSV in a form ``load_csv`` accepts.

    Missing values become empty fields; treatments and categorical extras
    are written as their level strings.
    """
    header = [data.outcome_name]
    header.extend(data.treatment_names)
    header.extend(data.covariate_names)
    header.extend(col.name for col in data.extra)
    columns = [data.treatment(name) for name in data.treatment_names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.y[i])) if np.isfinite(data.y[i]) else ""]
            for col in columns:
                code = col.codes[i]
                row.append(col.levels[code] if code >= 0 else "")
            for j in range(data.covariates.shape[1]):
                v = data.covariates[i, j]
                row.append(repr(float(v)) if np.isfinite(v) else "")
            for col in data.extra:
                if col.kind == "numeric":
                    v = col.values[i]
                    row.append(repr(float(v)) if np.isfinite(v) else "")
                else:
                    code = int(col.values[i])
                    row.append(col.categories[code] if code >= 0 else "")
            writer.writerow(row)
