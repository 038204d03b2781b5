"""Nuisance fits: outcome regressions and treatment propensity models.

The outcome regression sees adjustment covariates, extra covariates, and
treatment indicator columns (optionally with pairwise indicator products
across treatments); it predicts at observed rows or under a counterfactual
joint treatment assignment.  Propensity models regress treatment on the
adjustment covariates only, either one multinomial per treatment whose
joint probability is the product (factorized) or a single multinomial over
observed joint levels.  Probability queries are floored at ``PROB_FLOOR``
because they end up in denominators.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DataError, EstimationError
from .learners import (LearnerSpec, RidgeMultinomial, cv_select, make_learner,
                       stratified_fold_ids)

PROB_FLOOR = 1e-8


class FeaturePlan:
    """Deterministic design-matrix builder for one treatment set.

    Columns, in order: adjustment covariates, extra covariates (numeric
    as-is, categoricals one-hot without the first category), per-treatment
    indicators for every non-reference level, and, when ``interactions``
    is set, the pairwise products of indicator columns across distinct
    treatments.
    """

    def __init__(self, data: Dataset, treatment_names, interactions: bool = False,
                 use_extra: bool = True):
        self.treatment_names = tuple(treatment_names)
        self.interactions = bool(interactions)
        self.use_extra = bool(use_extra)
        self._levels = {name: data.levels(name) for name in self.treatment_names}

    def design(self, data: Dataset, rows: np.ndarray,
               levels: tuple[str, ...] | None = None) -> np.ndarray:
        """Design matrix for ``rows``; ``levels`` overrides every row's treatments."""
        blocks = [data.covariates[rows]]
        if self.use_extra:
            for col in data.extra:
                if col.kind == "numeric":
                    blocks.append(col.values[rows, None])
                else:
                    codes = col.values[rows]
                    for cat in range(1, len(col.categories)):
                        blocks.append((codes == cat).astype(np.float64)[:, None])
        indicator_sets = []
        for j, name in enumerate(self.treatment_names):
            declared = self._levels[name]
            if levels is None:
                codes = data.codes(name)[rows]
            else:
                codes = np.full(len(rows), declared.index(levels[j]), dtype=np.int32)
            columns = [(codes == l).astype(np.float64) for l in range(1, len(declared))]
            indicator_sets.append(columns)
            for col in columns:
                blocks.append(col[:, None])
        if self.interactions:
            for a in range(len(indicator_sets)):
                for b in range(a + 1, len(indicator_sets)):
                    for col_a in indicator_sets[a]:
                        for col_b in indicator_sets[b]:
                            blocks.append((col_a * col_b)[:, None])
        return np.concatenate(blocks, axis=1) if blocks else np.empty((len(rows), 0))


@dataclass
class OutcomeRegression:
    """A fitted outcome model plus the plan that feeds it."""

    plan: FeaturePlan
    model: object
    outcome_kind: str
    spec: LearnerSpec

    def predict(self, data: Dataset, rows: np.ndarray,
                levels: tuple[str, ...] | None = None) -> np.ndarray:
        """Conditional mean predictions, on the probability scale for binary outcomes."""
        X = self.plan.design(data, rows, levels)
        return np.asarray(self.model.predict(X), dtype=np.float64)


def fit_outcome(data: Dataset, treatment_names, rows: np.ndarray,
                spec: LearnerSpec) -> OutcomeRegression:
    plan = FeaturePlan(data, treatment_names, interactions=spec.interactions)
    model = make_learner(spec, data.outcome_kind)
    model.fit(plan.design(data, rows), data.y[rows])
    return OutcomeRegression(plan, model, data.outcome_kind, spec)


class FactorizedPropensity:
    """Per-treatment multinomials; joint probability is their product.

    Rows sum to one over the full grid of joint levels because each factor
    distribution sums to one.
    """

    mode = "factorized"

    def __init__(self, treatment_names, models, levels):
        self.treatment_names = tuple(treatment_names)
        self._models = dict(models)
        self._levels = dict(levels)

    def _proba(self, data: Dataset, rows: np.ndarray, name: str) -> np.ndarray:
        model = self._models[name]
        return model.predict_proba(data.covariates[rows])

    def _class_column(self, name: str, level: str) -> int:
        declared = self._levels[name]
        if level not in declared:
            raise DataError(f"level {level!r} is not declared for treatment {name!r}")
        model = self._models[name]
        code = declared.index(level)
        hit = np.flatnonzero(model.classes_ == code)
        if not hit.size:
            raise EstimationError(
                f"treatment {name!r} level {level!r} was never observed; "
                "no propensity is estimable for it"
            )
        return int(hit[0])

    def joint_probability(self, data: Dataset, rows: np.ndarray, levels) -> np.ndarray:
        """P(A = levels | W) for each row, floored at PROB_FLOOR."""
        prob = np.ones(len(rows))
        for name, level in zip(self.treatment_names, levels):
            col = self._class_column(name, level)
            prob *= self._proba(data, rows, name)[:, col]
        return np.maximum(prob, PROB_FLOOR)

    def observed_probability(self, data: Dataset, rows: np.ndarray) -> np.ndarray:
        """P(A = observed joint level | W) per row, floored at PROB_FLOOR."""
        prob = np.ones(len(rows))
        for name in self.treatment_names:
            model = self._models[name]
            proba = self._proba(data, rows, name)
            codes = data.codes(name)[rows]
            col_of_code = {int(c): i for i, c in enumerate(model.classes_)}
            cols = np.array([col_of_code.get(int(c), -1) for c in codes])
            if np.any(cols < 0):
                raise EstimationError("observed treatment level missing from propensity fit")
            prob *= proba[np.arange(len(rows)), cols]
        return np.maximum(prob, PROB_FLOOR)


class JointPropensity:
    """One multinomial over the observed joint levels of the treatment set."""

    mode = "joint"

    def __init__(self, treatment_names, model, combos, class_codes):
        self.treatment_names = tuple(treatment_names)
        self._model = model
        self._combos = combos  # tuple of level tuples, class order
        self._class_codes = class_codes

    def joint_probability(self, data: Dataset, rows: np.ndarray, levels) -> np.ndarray:
        levels = tuple(levels)
        try:
            col = self._combos.index(levels)
        except ValueError:
            raise EstimationError(
                f"joint level {levels!r} was never observed; refusing to extrapolate "
                "a joint propensity for it"
            ) from None
        proba = self._model.predict_proba(data.covariates[rows])
        return np.maximum(proba[:, col], PROB_FLOOR)

    def observed_probability(self, data: Dataset, rows: np.ndarray) -> np.ndarray:
        proba = self._model.predict_proba(data.covariates[rows])
        combo_code = _joint_codes(data, self.treatment_names, rows)
        lookup = {code: i for i, code in enumerate(self._class_codes)}
        cols = np.array([lookup.get(int(c), -1) for c in combo_code])
        if np.any(cols < 0):
            raise EstimationError("observed joint level missing from propensity fit")
        return np.maximum(proba[np.arange(len(rows)), cols], PROB_FLOOR)


def _joint_codes(data: Dataset, treatment_names, rows) -> np.ndarray:
    """Encode each row's joint treatment assignment as a single integer."""
    code = np.zeros(len(rows), dtype=np.int64)
    for name in treatment_names:
        code = code * (len(data.levels(name)) + 1) + data.codes(name)[rows]
    return code


def fit_propensity(data: Dataset, treatment_names, mode: str = "factorized",
                   lam: float = 1.0, rows: np.ndarray | None = None):
    """Fit the treatment mechanism on rows complete in (covariates, treatments).

    The outcome plays no role here, which is what lets one fit be shared by
    every estimand over the same treatment set.
    """
    treatment_names = tuple(treatment_names)
    if not treatment_names:
        raise DataError("fit_propensity needs at least one treatment")
    if rows is None:
        rows = data.complete_rows(treatment_names, include_outcome=False, include_extra=False)
    if not len(rows):
        raise EstimationError("no complete rows to fit a propensity model on")
    W = data.covariates[rows]
    for name in treatment_names:
        observed = np.unique(data.codes(name)[rows])
        if len(observed) < 2:
            raise EstimationError(
                f"treatment {name!r} has fewer than two observed levels; "
                "its propensity is degenerate"
            )
    if mode == "factorized":
        models = {}
        levels = {}
        for name in treatment_names:
            model = RidgeMultinomial(lam=lam)
            model.fit(W, data.codes(name)[rows])
            models[name] = model
            levels[name] = data.levels(name)
        return FactorizedPropensity(treatment_names, models, levels)
    if mode == "joint":
        joint = _joint_codes(data, treatment_names, rows)
        model = RidgeMultinomial(lam=lam)
        model.fit(W, joint)
        # decode class order back to level tuples
        combos = []
        for code in model.classes_:
            parts = []
            rem = int(code)
            for name in reversed(treatment_names):
                base = len(data.levels(name)) + 1
                parts.append(data.levels(name)[rem % base])
                rem //= base
            combos.append(tuple(reversed(parts)))
        return JointPropensity(treatment_names, model, tuple(combos),
                               [int(c) for c in model.classes_])
    raise ValueError(f"unknown propensity mode {mode!r}")


@dataclass
class NuisanceFit:
    """Everything an estimator needs for one estimand's rows.

    ``fold_ids`` (aligned with ``rows``) plus the per-fold model lists are
    present only when the fit was made for cross-validated estimators.
    """

    rows: np.ndarray
    excluded: int
    outcome: OutcomeRegression
    propensity: object
    selected: LearnerSpec
    cv_table: np.ndarray | None = None
    fold_ids: np.ndarray | None = None
    fold_outcome: list = field(default_factory=list)
    fold_propensity: list = field(default_factory=list)


def _rows_fingerprint(rows: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(rows, dtype=np.int64).tobytes()).hexdigest()


def _stratification_cells(data: Dataset, treatment_names, rows: np.ndarray) -> np.ndarray:
    """Outcome class crossed with the levels of the rarest treatment."""
    if data.outcome_kind == "binary":
        outcome_class = data.y[rows].astype(np.int64)
    else:
        outcome_class = np.zeros(len(rows), dtype=np.int64)
    rarest, rarest_min = None, None
    for name in treatment_names:
        counts = np.bincount(data.codes(name)[rows])
        level_min = counts[counts > 0].min()
        if rarest_min is None or level_min < rarest_min:
            rarest, rarest_min = name, level_min
    codes = data.codes(rarest)[rows].astype(np.int64)
    return outcome_class * (codes.max() + 1) + codes


def fit_nuisances(data: Dataset, estimand, learners, propensity_mode: str = "factorized",
                  propensity_lam: float = 1.0, folds: int | None = None, seed: int = 0,
                  select_folds: int = 3, cache: dict | None = None) -> NuisanceFit:
    """Fit outcome and propensity models for one estimand.

    ``learners`` is the candidate menu; with more than one entry the winner
    is chosen by stratified K-fold cross-validation on held-out loss.  With
    ``folds`` set, per-fold versions of both models are fitted for the
    cross-validated estimators: fold models never see their own fold's
    rows.  ``cache`` (shared by a batch runner) deduplicates propensity
    fits across estimands with the same treatment set and training rows.
    """
    learners = [learners] if isinstance(learners, LearnerSpec) else list(learners)
    if not learners:
        raise ValueError("fit_nuisances needs at least one learner spec")
    treatments = tuple(estimand.treatments)
    rows = data.complete_rows(treatments)
    if not len(rows):
        raise EstimationError("no complete rows for this estimand")
    excluded = data.n - len(rows)

    if len(learners) > 1:
        cells = _stratification_cells(data, treatments, rows)
        select_ids = stratified_fold_ids(cells, select_folds, seed, "select",
                                         estimand.name)
        designs = [FeaturePlan(data, treatments, interactions=s.interactions)
                   .design(data, rows) for s in learners]
        best, table = cv_select(learners, designs, data.y[rows], data.outcome_kind,
                                select_ids)
        selected = learners[best]
    else:
        selected, table = learners[0], None

    outcome = fit_outcome(data, treatments, rows, selected)

    prop_rows = data.complete_rows(treatments, include_outcome=False, include_extra=False)
    propensity = _cached_propensity(cache, data, treatments, propensity_mode,
                                    propensity_lam, prop_rows)

    fit = NuisanceFit(rows=rows, excluded=excluded, outcome=outcome,
                      propensity=propensity, selected=selected, cv_table=table)

    if folds is not None:
        if folds < 2:
            raise ValueError("cross-validated fits need folds >= 2")
        cells = _stratification_cells(data, treatments, rows)
        fold_ids = stratified_fold_ids(cells, folds, seed, "cv", data.outcome_name,
                                       _rows_fingerprint(rows))
        fit.fold_ids = fold_ids
        row_in_fold = {k: set(rows[fold_ids == k].tolist()) for k in range(folds)}
        for k in range(folds):
            train = rows[fold_ids != k]
            fit.fold_outcome.append(fit_outcome(data, treatments, train, selected))
            keep = np.array([r not in row_in_fold[k] for r in prop_rows])
            fit.fold_propensity.append(
                _cached_propensity(cache, data, treatments, propensity_mode,
                                   propensity_lam, prop_rows[keep])
            )
    return fit


def _cached_propensity(cache, data, treatments, mode, lam, rows):
    if cache is None:
        return fit_propensity(data, treatments, mode, lam, rows)
    key = (treatments, mode, float(lam), _rows_fingerprint(rows))
    if hasattr(cache, "get_or_create"):
        return cache.get_or_create(
            key, lambda: fit_propensity(data, treatments, mode, lam, rows))
    if key not in cache:
        cache[key] = fit_propensity(data, treatments, mode, lam, rows)
    return cache[key]
