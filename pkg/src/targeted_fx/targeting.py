"""Plug-in, one-step, and targeted estimators for signed contrasts.

Every estimator works from the same prepared grid of per-term predictions:
outcome predictions at the observed assignment and at each counterfactual
vertex, joint propensities at each vertex, and per-row term membership.
Canonical estimators read predictions from models fitted on all rows;
cross-validated estimators read out-of-fold predictions assembled from the
per-fold models, so each row is scored by a model that never saw it.

The efficient influence function is

    D(O) = H(A, W) * (Y - Qbar(A, W)) + sum_s sign_s * Qbar(a_s, W) - psi

with clever covariate H = sum_s sign_s * 1{A = a_s} / g(a_s | W).  The
weighted variants move 1/g out of the covariate and into regression
weights, which trades some efficiency for stability under near-positivity
violations.  Both variants drive the empirical score mean(H * (Y - Q*))
to zero, so each reports a residual bias of zero, but their updated
outcome fits differ and the two point estimates coincide only
asymptotically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import EstimationError
from .estimands import (Estimand, FilterDecision, expand_estimand,
                        frequency_filter)
from .inference import pvalue, wald_ci
from .learners import LearnerSpec, _ParamsMixin
from .nuisance import NuisanceFit, fit_nuisances

Q_CLIP = 1e-8
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50

ESTIMATOR_NAMES = ("plugin", "one_step", "tmle", "wtmle",
                   "cv_one_step", "cv_tmle", "cv_wtmle")


@dataclass
class TermGrid:
    """Per-row, per-term predictions shared by every estimator."""

    y: np.ndarray
    outcome_kind: str
    signs: np.ndarray           # (T,)
    level_sets: tuple           # (T,) joint level tuples, expansion order
    match: np.ndarray           # (n, T) bool, row's observed assignment == vertex
    q_obs: np.ndarray           # (n,)
    q_cf: np.ndarray            # (n, T)
    g_cf: np.ndarray            # (n, T) floored joint propensities
    fold_ids: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.y)

    def clever_covariate(self) -> np.ndarray:
        """H, nonzero only on rows matching some vertex."""
        return (self.match * (self.signs / self.g_cf)).sum(axis=1)

    def signed_membership(self) -> np.ndarray:
        """H prime: the sign of the matched vertex, zero elsewhere."""
        return (self.match * self.signs).sum(axis=1)

    def weights(self) -> np.ndarray:
        """Inverse propensity weights at the matched vertex, zero elsewhere."""
        return (self.match / self.g_cf).sum(axis=1)


def build_grid(data: Dataset, estimand: Estimand, fit: NuisanceFit,
               cross_fitted: bool = False) -> TermGrid:
    """Assemble the prediction grid for one estimand from a nuisance fit."""
    rows = fit.rows
    terms = expand_estimand(estimand)
    signs = np.array([t.sign for t in terms], dtype=np.float64)
    level_sets = tuple(t.levels for t in terms)
    n, T = len(rows), len(terms)
    match = np.zeros((n, T), dtype=bool)
    for t, lv in enumerate(level_sets):
        match[:, t] = data.match_mask(estimand.treatments, lv, rows)
    q_obs = np.empty(n)
    q_cf = np.empty((n, T))
    g_cf = np.empty((n, T))
    if cross_fitted:
        if fit.fold_ids is None or not fit.fold_outcome:
            raise ValueError("cross-validated estimators need a nuisance fit with folds")
        for k in range(len(fit.fold_outcome)):
            mask = fit.fold_ids == k
            sub = rows[mask]
            q_obs[mask] = fit.fold_outcome[k].predict(data, sub)
            for t, lv in enumerate(level_sets):
                q_cf[mask, t] = fit.fold_outcome[k].predict(data, sub, levels=lv)
                g_cf[mask, t] = fit.fold_propensity[k].joint_probability(data, sub, lv)
    else:
        q_obs[:] = fit.outcome.predict(data, rows)
        for t, lv in enumerate(level_sets):
            q_cf[:, t] = fit.outcome.predict(data, rows, levels=lv)
            g_cf[:, t] = fit.propensity.joint_probability(data, rows, lv)
    return TermGrid(y=data.y[rows], outcome_kind=data.outcome_kind, signs=signs,
                    level_sets=level_sets, match=match, q_obs=q_obs, q_cf=q_cf,
                    g_cf=g_cf, fold_ids=fit.fold_ids if cross_fitted else None)


@dataclass
class EstimateReport:
    """One estimator's output for one estimand.

    ``variance`` is the influence-function variance (mean of squared EIF);
    the standard error of ``psi`` is ``sqrt(variance / n)``.  ``eif`` is
    aligned with ``row_index``, the original dataset rows that entered
    estimation.
    """

    estimator: str
    estimand: Estimand
    psi: float
    variance: float
    n: int
    eif: np.ndarray
    row_index: np.ndarray
    bn: float
    epsilon: float | None = None
    counterfactual_means: list = field(default_factory=list)
    filter_decision: FilterDecision | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance / self.n))

    def to_dict(self) -> dict:
        out = {
            "estimator": self.estimator,
            "estimand": self.estimand.describe(),
            "psi": self.psi,
            "variance": self.variance,
            "se": self.se,
            "n": self.n,
            "bn": self.bn,
            "epsilon": self.epsilon,
            "counterfactual_means": [
                {"levels": list(lv), "sign": s, "mean": m}
                for lv, s, m in self.counterfactual_means
            ],
            "diagnostics": self.diagnostics,
        }
        if self.filter_decision is not None:
            out["filter"] = self.filter_decision.to_dict()
        return out


def _check_support(grid: TermGrid, allow_empty: bool) -> bool:
    counts = grid.match.sum(axis=0)
    if np.all(counts > 0):
        return False
    missing = [grid.level_sets[t] for t in np.flatnonzero(counts == 0)]
    if allow_empty:
        return True
    raise EstimationError(
        f"no observations at joint level(s) {missing}; the estimator cannot "
        "correct the plug-in there"
    )


def _base_diagnostics(grid: TermGrid, fit: NuisanceFit) -> dict:
    matched = grid.match.any(axis=1)
    g_at_match = (grid.match * grid.g_cf).sum(axis=1)[matched]
    diag = {
        "term_counts": grid.match.sum(axis=0).tolist(),
        "g_min": float(g_at_match.min()) if g_at_match.size else None,
        "g_max": float(g_at_match.max()) if g_at_match.size else None,
        "learner": fit.selected.to_dict(),
    }
    if grid.fold_ids is not None:
        diag["fold_sizes"] = np.bincount(grid.fold_ids).tolist()
    return diag


def _eif(grid: TermGrid, H: np.ndarray, q_obs: np.ndarray, q_cf: np.ndarray,
         center: np.ndarray | float) -> np.ndarray:
    return H * (grid.y - q_obs) + q_cf @ grid.signs - center


def _fold_centers(grid: TermGrid, per_row_value: np.ndarray) -> np.ndarray:
    """Per-row centering constants: each row gets its own fold's mean."""
    centers = np.empty(grid.n)
    for k in np.unique(grid.fold_ids):
        mask = grid.fold_ids == k
        centers[mask] = per_row_value[mask].mean()
    return centers


def _term_means_plugin(grid: TermGrid, q_cf: np.ndarray) -> list:
    return [(lv, float(s), float(q_cf[:, t].mean()))
            for t, (lv, s) in enumerate(zip(grid.level_sets, grid.signs))]


def _term_means_onestep(grid: TermGrid) -> list:
    out = []
    resid = grid.y - grid.q_obs
    for t, (lv, s) in enumerate(zip(grid.level_sets, grid.signs)):
        correction = grid.match[:, t] * resid / grid.g_cf[:, t]
        out.append((lv, float(s), float((grid.q_cf[:, t] + correction).mean())))
    return out


def plugin(data: Dataset, estimand: Estimand, fit: NuisanceFit,
           filter_decision: FilterDecision | None = None) -> EstimateReport:
    """G-computation plug-in; reported EIF is centered at its own mean."""
    grid = build_grid(data, estimand, fit)
    extrapolated = _check_support(grid, allow_empty=True)
    H = grid.clever_covariate()
    psi = float((grid.q_cf @ grid.signs).mean())
    raw = _eif(grid, H, grid.q_obs, grid.q_cf, psi)
    bn = float(raw.mean())
    eif = raw - bn
    diag = _base_diagnostics(grid, fit)
    diag["extrapolated"] = extrapolated
    return EstimateReport(
        estimator="plugin", estimand=estimand, psi=psi,
        variance=float((eif ** 2).mean()), n=grid.n, eif=eif,
        row_index=fit.rows, bn=bn, epsilon=None,
        counterfactual_means=_term_means_plugin(grid, grid.q_cf),
        filter_decision=filter_decision, diagnostics=diag,
    )


def one_step(data: Dataset, estimand: Estimand, fit: NuisanceFit,
             filter_decision: FilterDecision | None = None) -> EstimateReport:
    """Plug-in plus the empirical mean of the EIF correction term."""
    grid = build_grid(data, estimand, fit)
    _check_support(grid, allow_empty=False)
    H = grid.clever_covariate()
    plug = float((grid.q_cf @ grid.signs).mean())
    bn = float((H * (grid.y - grid.q_obs)).mean())
    psi = plug + bn
    eif = _eif(grid, H, grid.q_obs, grid.q_cf, psi)
    return EstimateReport(
        estimator="one_step", estimand=estimand, psi=psi,
        variance=float((eif ** 2).mean()), n=grid.n, eif=eif,
        row_index=fit.rows, bn=bn, epsilon=None,
        counterfactual_means=_term_means_onestep(grid),
        filter_decision=filter_decision, diagnostics=_base_diagnostics(grid, fit),
    )


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fluctuate(grid: TermGrid, weighted: bool):
    """Solve the one-dimensional fluctuation and return updated predictions.

    Returns (epsilon, q_obs_star, q_cf_star, diagnostics_fragment).  The
    continuous fluctuation is a closed-form least squares step; the binary
    one is a Newton solve of the weighted logistic score, after clipping
    predictions into [Q_CLIP, 1 - Q_CLIP] so the logit is finite.
    """
    H = grid.clever_covariate()
    if weighted:
        cov_obs = grid.signed_membership()
        w = grid.weights()
        cov_cf = np.broadcast_to(grid.signs, grid.q_cf.shape)
    else:
        cov_obs = H
        w = np.ones(grid.n)
        cov_cf = grid.signs / grid.g_cf

    if grid.outcome_kind == "continuous":
        denom = float((w * cov_obs * cov_obs).sum())
        if denom <= 0.0:
            raise EstimationError("degenerate fluctuation: no rows carry weight")
        eps = float((w * cov_obs * (grid.y - grid.q_obs)).sum() / denom)
        q_obs_star = grid.q_obs + eps * cov_obs
        q_cf_star = grid.q_cf + eps * cov_cf
        return eps, q_obs_star, q_cf_star, {"clipped": 0, "newton_iterations": None}

    clipped = int((grid.q_obs < Q_CLIP).sum() + (grid.q_obs > 1 - Q_CLIP).sum()
                  + (grid.q_cf < Q_CLIP).sum() + (grid.q_cf > 1 - Q_CLIP).sum())
    off_obs = _logit(np.clip(grid.q_obs, Q_CLIP, 1 - Q_CLIP))
    off_cf = _logit(np.clip(grid.q_cf, Q_CLIP, 1 - Q_CLIP))
    eps = 0.0
    iters = 0
    for iters in range(1, NEWTON_MAX_ITER + 1):
        p = _expit(off_obs + eps * cov_obs)
        score = float((w * cov_obs * (grid.y - p)).sum())
        curvature = float((w * cov_obs * cov_obs * p * (1.0 - p)).sum())
        if curvature <= 0.0:
            raise EstimationError("degenerate fluctuation: flat logistic score")
        step = score / curvature
        eps += step
        if abs(step) <= NEWTON_TOL * (1.0 + abs(eps)):
            break
    else:
        raise EstimationError(
            f"fluctuation Newton solve did not converge in {NEWTON_MAX_ITER} steps"
        )
    q_obs_star = _expit(off_obs + eps * cov_obs)
    q_cf_star = _expit(off_cf + eps * cov_cf)
    return eps, q_obs_star, q_cf_star, {"clipped": clipped, "newton_iterations": iters}


def tmle(data: Dataset, estimand: Estimand, fit: NuisanceFit, weighted: bool = False,
         filter_decision: FilterDecision | None = None) -> EstimateReport:
    """Targeted update of the outcome fit, then plug in.

    The fluctuation solves the EIF score equation in epsilon, so the
    residual bias term of the report is zero up to solver tolerance.
    """
    grid = build_grid(data, estimand, fit)
    _check_support(grid, allow_empty=False)
    eps, q_obs_star, q_cf_star, frag = _fluctuate(grid, weighted)
    H = grid.clever_covariate()
    psi = float((q_cf_star @ grid.signs).mean())
    bn = float((H * (grid.y - q_obs_star)).mean())
    eif = _eif(grid, H, q_obs_star, q_cf_star, psi)
    diag = _base_diagnostics(grid, fit)
    diag.update(frag)
    return EstimateReport(
        estimator="wtmle" if weighted else "tmle", estimand=estimand, psi=psi,
        variance=float((eif ** 2).mean()), n=grid.n, eif=eif,
        row_index=fit.rows, bn=bn, epsilon=eps,
        counterfactual_means=_term_means_plugin(grid, q_cf_star),
        filter_decision=filter_decision, diagnostics=diag,
    )


def cv_one_step(data: Dataset, estimand: Estimand, fit: NuisanceFit,
                filter_decision: FilterDecision | None = None) -> EstimateReport:
    """One-step estimator on out-of-fold predictions.

    The estimate is the fold-size weighted mean of per-fold one-step
    estimates; the EIF is centered within each fold at that fold's
    estimate, so its overall mean is exactly zero.
    """
    grid = build_grid(data, estimand, fit, cross_fitted=True)
    _check_support(grid, allow_empty=False)
    H = grid.clever_covariate()
    per_row = grid.q_cf @ grid.signs + H * (grid.y - grid.q_obs)
    centers = _fold_centers(grid, per_row)
    psi = float(per_row.mean())
    eif = _eif(grid, H, grid.q_obs, grid.q_cf, centers)
    bn = float((H * (grid.y - grid.q_obs)).mean())
    return EstimateReport(
        estimator="cv_one_step", estimand=estimand, psi=psi,
        variance=float((eif ** 2).mean()), n=grid.n, eif=eif,
        row_index=fit.rows, bn=bn, epsilon=None,
        counterfactual_means=_term_means_onestep(grid),
        filter_decision=filter_decision, diagnostics=_base_diagnostics(grid, fit),
    )


def cv_tmle(data: Dataset, estimand: Estimand, fit: NuisanceFit, weighted: bool = False,
            filter_decision: FilterDecision | None = None) -> EstimateReport:
    """Targeted estimator on out-of-fold predictions with one pooled fluctuation.

    A single epsilon is solved on the pooled out-of-fold offsets and
    covariates, the per-fold counterfactual predictions are updated with
    it, and the estimate is the pooled mean of the updated contrasts.  The
    EIF is centered within each fold at the fold's updated plug-in mean.
    """
    grid = build_grid(data, estimand, fit, cross_fitted=True)
    _check_support(grid, allow_empty=False)
    eps, q_obs_star, q_cf_star, frag = _fluctuate(grid, weighted)
    H = grid.clever_covariate()
    contrasts = q_cf_star @ grid.signs
    psi = float(contrasts.mean())
    centers = _fold_centers(grid, contrasts)
    eif = _eif(grid, H, q_obs_star, q_cf_star, centers)
    bn = float((H * (grid.y - q_obs_star)).mean())
    diag = _base_diagnostics(grid, fit)
    diag.update(frag)
    return EstimateReport(
        estimator="cv_wtmle" if weighted else "cv_tmle", estimand=estimand, psi=psi,
        variance=float((eif ** 2).mean()), n=grid.n, eif=eif,
        row_index=fit.rows, bn=bn, epsilon=eps,
        counterfactual_means=_term_means_plugin(grid, q_cf_star),
        filter_decision=filter_decision, diagnostics=diag,
    )


def estimate(data: Dataset, estimand: Estimand, fit: NuisanceFit, estimator: str,
             filter_decision: FilterDecision | None = None) -> EstimateReport:
    """Dispatch one named estimator against a prepared nuisance fit."""
    if estimator == "plugin":
        return plugin(data, estimand, fit, filter_decision)
    if estimator == "one_step":
        return one_step(data, estimand, fit, filter_decision)
    if estimator == "tmle":
        return tmle(data, estimand, fit, False, filter_decision)
    if estimator == "wtmle":
        return tmle(data, estimand, fit, True, filter_decision)
    if estimator == "cv_one_step":
        return cv_one_step(data, estimand, fit, filter_decision)
    if estimator == "cv_tmle":
        return cv_tmle(data, estimand, fit, False, filter_decision)
    if estimator == "cv_wtmle":
        return cv_tmle(data, estimand, fit, True, filter_decision)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATOR_NAMES}")


class TargetedEstimator(_ParamsMixin):
    """High-level estimator: filter, fit nuisances, target, report.

    Parameters
    ----------
    estimator : str
        One of ``ESTIMATOR_NAMES``.
    learners : sequence of LearnerSpec, optional
        Outcome-model candidates; more than one triggers cross-validated
        selection.  Defaults to a single ridge model matched to the
        outcome kind.
    propensity_mode : str
        "factorized" fits one multinomial per treatment; "joint" fits a
        single multinomial over observed joint levels.
    propensity_lam : float
        Ridge penalty of the propensity models.
    folds : int, optional
        Fold count for cross-validated estimators (default 3 for them,
        unused otherwise).
    threshold : float
        Minimum frequency each counterfactual vertex must reach among
        complete rows; below it the estimand is filtered, not estimated.
    seed : int
        Seed for fold assignment.

    Attributes
    ----------
    report_ : EstimateReport or None
        The estimate, or None when the frequency filter dropped the
        estimand (see ``filter_decision_``).

    Examples
    --------
    >>> est = TargetedEstimator(estimator="tmle")
    >>> est.fit(data, estimand)                       # doctest: +SKIP
    >>> est.psi_, est.confidence_interval(0.05)       # doctest: +SKIP
    """

    def __init__(self, estimator: str = "tmle", learners=None,
                 propensity_mode: str = "factorized", propensity_lam: float = 1.0,
                 folds: int | None = None, threshold: float = 0.01, seed: int = 0):
        self.estimator = estimator
        self.learners = learners
        self.propensity_mode = propensity_mode
        self.propensity_lam = propensity_lam
        self.folds = folds
        self.threshold = threshold
        self.seed = seed

    def fit(self, data: Dataset, estimand: Estimand):
        if self.estimator not in ESTIMATOR_NAMES:
            raise ValueError(
                f"unknown estimator {self.estimator!r}; expected one of {ESTIMATOR_NAMES}"
            )
        learners = self.learners
        if learners is None:
            kind = "ridge_linear" if data.outcome_kind == "continuous" else "ridge_logistic"
            learners = [LearnerSpec(kind=kind, lam=1.0)]
        decision = frequency_filter(data, estimand, self.threshold)
        self.filter_decision_ = decision
        self.report_ = None
        if not decision.keep:
            return self
        folds = self.folds
        if folds is None and self.estimator.startswith("cv_"):
            folds = 3
        fit = fit_nuisances(
            data, estimand, learners, propensity_mode=self.propensity_mode,
            propensity_lam=self.propensity_lam,
            folds=folds if self.estimator.startswith("cv_") else None,
            seed=self.seed,
        )
        self.report_ = estimate(data, estimand, fit, self.estimator, decision)
        return self

    @property
    def psi_(self) -> float:
        self._check_estimated()
        return self.report_.psi

    @property
    def se_(self) -> float:
        self._check_estimated()
        return self.report_.se

    def confidence_interval(self, alpha: float = 0.05) -> tuple[float, float]:
        self._check_estimated()
        return wald_ci(self.report_.psi, self.report_.se, alpha)

    def p_value(self, null: float = 0.0) -> float:
        self._check_estimated()
        return pvalue(self.report_.psi, self.report_.se, null)

    def _check_estimated(self):
        if getattr(self, "report_", None) is None:
            raise EstimationError(
                "no estimate available; fit() was not called or the estimand "
                "was dropped by the frequency filter"
            )
