"""Synthetic data generation, calibration checks, and simulation studies.

A generative specification describes covariates, treatment assignment
mechanisms, and an outcome built from a small term grammar (products of
covariates, treatment-level indicators, and hinge functions).  From it one
can draw ancestral samples, draw exact-null samples where the outcome is
independent of everything, compute counterfactual truths, verify the
first-order expansion of an estimator's plug-in error, and run replicated
evaluation grids whose outputs are byte-stable under parallelism.
"""

from __future__ import annotations

import concurrent.futures
import csv
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, TreatmentColumn
from .errors import ConfigError, DataError, EstimationError
from .estimands import Estimand, expand_estimand, frequency_filter
from .inference import pvalue, wald_ci, wilson_interval
from .learners import LearnerSpec, _expit
from .nuisance import fit_nuisances
from .rng import rng_for
from .targeting import ESTIMATOR_NAMES, estimate

THREADS_ENV = "TARGETED_FX_THREADS"


@dataclass(frozen=True)
class Factor:
    """One multiplicand of a term: a covariate, an indicator, or a hinge."""

    kind: str                  # "covariate" | "indicator" | "hinge"
    name: str
    level: str | None = None   # indicator only
    knot: float | None = None  # hinge only


@dataclass(frozen=True)
class Term:
    coefficient: float
    factors: tuple[Factor, ...] = ()


@dataclass(frozen=True)
class TreatmentMechanism:
    """Multinomial logit assignment: reference level has zero coefficients."""

    name: str
    levels: tuple[str, ...]
    coefficients: np.ndarray   # (len(levels) - 1, 1 + d), row per non-reference level

    def probabilities(self, W: np.ndarray) -> np.ndarray:
        """(n, L) assignment probabilities given covariates."""
        n = W.shape[0]
        logits = np.zeros((n, len(self.levels)))
        design = np.column_stack([np.ones(n), W])
        logits[:, 1:] = design @ self.coefficients.T
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        return w / w.sum(axis=1, keepdims=True)

    def marginal_probabilities(self) -> np.ndarray:
        """Assignment probabilities with covariate effects removed."""
        logits = np.concatenate([[0.0], self.coefficients[:, 0]])
        logits -= logits.max()
        w = np.exp(logits)
        return w / w.sum()


@dataclass
class GenerativeSpec:
    """A complete data generating process for simulation studies."""

    covariate_names: tuple[str, ...]
    covariate_kind: str                    # "normal" | "empirical"
    treatments: tuple[TreatmentMechanism, ...]
    outcome_name: str
    outcome_kind: str                      # "continuous" | "binary"
    terms: tuple[Term, ...]
    noise_family: str                      # "gaussian" | "bernoulli"
    sigma: float | None = None
    empirical_pool: np.ndarray | None = None

    def __post_init__(self):
        self._treatment_index = {t.name: i for i, t in enumerate(self.treatments)}
        self._covariate_index = {c: i for i, c in enumerate(self.covariate_names)}

    @property
    def dimension(self) -> int:
        return len(self.covariate_names)

    def mechanism(self, name: str) -> TreatmentMechanism:
        return self.treatments[self._treatment_index[name]]

    def intercept(self) -> float:
        """Sum of factor-free terms: the outcome's constant part."""
        return float(sum(t.coefficient for t in self.terms if not t.factors))

    def null_outcome_mean(self) -> float:
        """The exact outcome mean under the null sampler."""
        base = self.intercept()
        return float(_expit(np.array([base]))[0]) if self.noise_family == "bernoulli" else base

    def linear_predictor(self, W: np.ndarray, codes: dict) -> np.ndarray:
        """Evaluate the term grammar; ``codes`` maps treatment name to level codes."""
        n = W.shape[0]
        lp = np.zeros(n)
        for term in self.terms:
            value = np.full(n, term.coefficient)
            for f in term.factors:
                if f.kind == "covariate":
                    value = value * W[:, self._covariate_index[f.name]]
                elif f.kind == "hinge":
                    value = value * np.maximum(0.0, W[:, self._covariate_index[f.name]] - f.knot)
                else:
                    mech = self.mechanism(f.name)
                    target = mech.levels.index(f.level)
                    value = value * (codes[f.name] == target).astype(np.float64)
            lp += value
        return lp

    def _mean_from_lp(self, lp: np.ndarray) -> np.ndarray:
        return _expit(lp) if self.noise_family == "bernoulli" else lp

    def true_mean(self, data: Dataset, rows: np.ndarray, treatment_names=None,
                  levels=None) -> np.ndarray:
        """E[Y | A, W] at observed rows, with ``treatment_names`` forced to ``levels``.

        Treatments outside the forced set keep their observed codes when
        ``levels`` is None; under intervention they are marginalized over
        their own assignment mechanism given W, which is exact because the
        mechanisms are mutually independent given covariates.
        """
        W = data.covariates[rows]
        if levels is None:
            codes = {t.name: data.codes(t.name)[rows] for t in self.treatments}
            return self._mean_from_lp(self.linear_predictor(W, codes))
        treatment_names = tuple(treatment_names)
        fixed = {}
        for name, level in zip(treatment_names, levels):
            mech = self.mechanism(name)
            fixed[name] = np.full(len(rows), mech.levels.index(level), dtype=np.int64)
        free = [t for t in self.treatments if t.name not in fixed]
        if not free:
            return self._mean_from_lp(self.linear_predictor(W, fixed))
        total = np.zeros(len(rows))
        probs = {t.name: t.probabilities(W) for t in free}
        for combo in itertools.product(*[range(len(t.levels)) for t in free]):
            codes = dict(fixed)
            weight = np.ones(len(rows))
            for t, code in zip(free, combo):
                codes[t.name] = np.full(len(rows), code, dtype=np.int64)
                weight = weight * probs[t.name][:, code]
            total += weight * self._mean_from_lp(self.linear_predictor(W, codes))
        return total

    def true_propensity(self, data: Dataset, rows: np.ndarray, treatment_names,
                        levels) -> np.ndarray:
        """P(A_S = levels | W): a product because mechanisms are independent given W."""
        W = data.covariates[rows]
        prob = np.ones(len(rows))
        for name, level in zip(treatment_names, levels):
            mech = self.mechanism(name)
            prob = prob * mech.probabilities(W)[:, mech.levels.index(level)]
        return prob


class OracleOutcome:
    """Adapter exposing the generative truth through the outcome-model interface."""

    def __init__(self, spec: GenerativeSpec, treatment_names):
        self.spec = spec
        self.treatment_names = tuple(treatment_names)

    def predict(self, data, rows, levels=None):
        if levels is None:
            return self.spec.true_mean(data, rows)
        return self.spec.true_mean(data, rows, self.treatment_names, levels)


class OraclePropensity:
    """Adapter exposing the true assignment mechanism as a propensity model."""

    def __init__(self, spec: GenerativeSpec, treatment_names):
        self.spec = spec
        self.treatment_names = tuple(treatment_names)

    def joint_probability(self, data, rows, levels):
        return self.spec.true_propensity(data, rows, self.treatment_names, levels)

    def observed_probability(self, data, rows):
        prob = np.ones(len(rows))
        W = data.covariates[rows]
        for name in self.treatment_names:
            mech = self.spec.mechanism(name)
            codes = data.codes(name)[rows]
            prob = prob * mech.probabilities(W)[np.arange(len(rows)), codes]
        return prob


def _require(condition, path, message):
    if not condition:
        raise ConfigError([(path, message)])


def parse_generative_spec(raw: dict, base_dir: str = ".") -> GenerativeSpec:
    """Validate a JSON-shaped dict into a GenerativeSpec; paths use slashes."""
    _require(isinstance(raw, dict), "", "generative spec must be an object")
    unknown = set(raw) - {"covariates", "treatments", "outcome"}
    _require(not unknown, "", f"unknown keys {sorted(unknown)}")
    for key in ("covariates", "treatments", "outcome"):
        _require(key in raw, key, "missing")

    cov = raw["covariates"]
    _require(isinstance(cov, dict), "covariates", "must be an object")
    kind = cov.get("kind")
    _require(kind in ("normal", "empirical"), "covariates/kind",
             "must be 'normal' or 'empirical'")
    pool = None
    if kind == "normal":
        unknown = set(cov) - {"kind", "dimension", "names"}
        _require(not unknown, "covariates", f"unknown keys {sorted(unknown)}")
        if "names" in cov:
            names = tuple(cov["names"])
            _require(all(isinstance(s, str) and s for s in names), "covariates/names",
                     "must be nonempty strings")
            _require("dimension" not in cov or cov["dimension"] == len(names),
                     "covariates/dimension", "contradicts names")
        else:
            dim = cov.get("dimension")
            _require(isinstance(dim, int) and dim >= 1, "covariates/dimension",
                     "must be a positive integer")
            names = tuple(f"w{i + 1}" for i in range(dim))
    else:
        unknown = set(cov) - {"kind", "path"}
        _require(not unknown, "covariates", f"unknown keys {sorted(unknown)}")
        _require(isinstance(cov.get("path"), str), "covariates/path", "must be a string")
        path = os.path.join(base_dir, cov["path"])
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                names = tuple(next(reader))
                pool = np.array([[float(v) for v in row] for row in reader])
        except (OSError, ValueError, StopIteration) as exc:
            raise ConfigError([("covariates/path", f"unreadable pool: {exc}")]) from None
        _require(pool.ndim == 2 and pool.shape[0] >= 1 and pool.shape[1] == len(names),
                 "covariates/path", "pool must be a nonempty numeric table")
        _require(bool(np.all(np.isfinite(pool))), "covariates/path",
                 "pool contains non-finite values")
    dim = len(names)

    raw_treat = raw["treatments"]
    _require(isinstance(raw_treat, list) and raw_treat, "treatments",
             "must be a nonempty list")
    mechanisms = []
    seen = set()
    for i, t in enumerate(raw_treat):
        where = f"treatments/{i}"
        _require(isinstance(t, dict), where, "must be an object")
        unknown = set(t) - {"name", "levels", "logit_coefficients"}
        _require(not unknown, where, f"unknown keys {sorted(unknown)}")
        name = t.get("name")
        _require(isinstance(name, str) and name, f"{where}/name", "must be a nonempty string")
        _require(name not in seen, f"{where}/name", "duplicate treatment name")
        seen.add(name)
        levels = t.get("levels")
        _require(isinstance(levels, list) and len(levels) >= 2, f"{where}/levels",
                 "must list at least two levels")
        levels = tuple(str(v) for v in levels)
        _require(len(set(levels)) == len(levels), f"{where}/levels", "levels must be distinct")
        coefs = t.get("logit_coefficients")
        _require(isinstance(coefs, dict), f"{where}/logit_coefficients",
                 "must map non-reference levels to coefficient vectors")
        expect = set(levels[1:])
        _require(set(coefs) == expect, f"{where}/logit_coefficients",
                 f"must have exactly the non-reference levels {sorted(expect)}")
        matrix = np.zeros((len(levels) - 1, 1 + dim))
        for j, level in enumerate(levels[1:]):
            vec = coefs[level]
            _require(isinstance(vec, list) and len(vec) == 1 + dim,
                     f"{where}/logit_coefficients/{level}",
                     f"must have 1 + {dim} numbers (intercept then covariates)")
            try:
                matrix[j] = [float(v) for v in vec]
            except (TypeError, ValueError):
                raise ConfigError([(f"{where}/logit_coefficients/{level}",
                                    "entries must be numbers")]) from None
        mechanisms.append(TreatmentMechanism(name=name, levels=levels, coefficients=matrix))

    out = raw["outcome"]
    _require(isinstance(out, dict), "outcome", "must be an object")
    unknown = set(out) - {"name", "kind", "terms", "noise"}
    _require(not unknown, "outcome", f"unknown keys {sorted(unknown)}")
    oname = out.get("name")
    _require(isinstance(oname, str) and oname, "outcome/name", "must be a nonempty string")
    okind = out.get("kind")
    _require(okind in ("continuous", "binary"), "outcome/kind",
             "must be 'continuous' or 'binary'")
    raw_terms = out.get("terms")
    _require(isinstance(raw_terms, list), "outcome/terms", "must be a list")
    mech_by_name = {m.name: m for m in mechanisms}
    terms = []
    for i, rt in enumerate(raw_terms):
        where = f"outcome/terms/{i}"
        _require(isinstance(rt, dict), where, "must be an object")
        unknown = set(rt) - {"coefficient", "factors"}
        _require(not unknown, where, f"unknown keys {sorted(unknown)}")
        try:
            coef = float(rt["coefficient"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError([(f"{where}/coefficient", "must be a number")]) from None
        factors = []
        for j, rf in enumerate(rt.get("factors", [])):
            fwhere = f"{where}/factors/{j}"
            _require(isinstance(rf, dict), fwhere, "must be an object")
            if "covariate" in rf:
                unknown = set(rf) - {"covariate"}
                _require(not unknown, fwhere, f"unknown keys {sorted(unknown)}")
                _require(rf["covariate"] in names, f"{fwhere}/covariate",
                         "references an undeclared covariate")
                factors.append(Factor(kind="covariate", name=rf["covariate"]))
            elif "treatment" in rf:
                unknown = set(rf) - {"treatment", "level"}
                _require(not unknown, fwhere, f"unknown keys {sorted(unknown)}")
                tname = rf["treatment"]
                _require(tname in mech_by_name, f"{fwhere}/treatment",
                         "references an undeclared treatment")
                level = str(rf.get("level"))
                _require(level in mech_by_name[tname].levels, f"{fwhere}/level",
                         f"not a declared level of {tname!r}")
                factors.append(Factor(kind="indicator", name=tname, level=level))
            elif "hinge" in rf:
                unknown = set(rf) - {"hinge", "knot"}
                _require(not unknown, fwhere, f"unknown keys {sorted(unknown)}")
                _require(rf["hinge"] in names, f"{fwhere}/hinge",
                         "references an undeclared covariate")
                try:
                    knot = float(rf["knot"])
                except (KeyError, TypeError, ValueError):
                    raise ConfigError([(f"{fwhere}/knot", "must be a number")]) from None
                factors.append(Factor(kind="hinge", name=rf["hinge"], knot=knot))
            else:
                raise ConfigError([(fwhere,
                                    "must name a covariate, treatment, or hinge")])
        terms.append(Term(coefficient=coef, factors=tuple(factors)))

    noise = out.get("noise")
    _require(isinstance(noise, dict), "outcome/noise", "must be an object")
    family = noise.get("family")
    _require(family in ("gaussian", "bernoulli"), "outcome/noise/family",
             "must be 'gaussian' or 'bernoulli'")
    sigma = None
    if family == "gaussian":
        unknown = set(noise) - {"family", "sigma"}
        _require(not unknown, "outcome/noise", f"unknown keys {sorted(unknown)}")
        try:
            sigma = float(noise["sigma"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError([("outcome/noise/sigma", "must be a number")]) from None
        _require(sigma >= 0.0, "outcome/noise/sigma", "must be nonnegative")
        _require(okind == "continuous", "outcome/noise/family",
                 "gaussian noise needs a continuous outcome")
    else:
        unknown = set(noise) - {"family"}
        _require(not unknown, "outcome/noise", f"unknown keys {sorted(unknown)}")
        _require(okind == "binary", "outcome/noise/family",
                 "bernoulli noise needs a binary outcome")
    _require(oname not in seen and oname not in names, "outcome/name",
             "collides with another column")

    return GenerativeSpec(
        covariate_names=names, covariate_kind=kind, treatments=tuple(mechanisms),
        outcome_name=oname, outcome_kind=okind, terms=tuple(terms),
        noise_family=family, sigma=sigma, empirical_pool=pool,
    )


def _draw_covariates(spec: GenerativeSpec, n: int, rng) -> np.ndarray:
    if spec.covariate_kind == "normal":
        return rng.standard_normal((n, spec.dimension))
    idx = rng.integers(0, spec.empirical_pool.shape[0], size=n)
    return spec.empirical_pool[idx]


def _categorical(prob: np.ndarray, rng) -> np.ndarray:
    """Row-wise categorical draw from an (n, L) probability matrix."""
    u = rng.random(prob.shape[0])
    cdf = np.cumsum(prob, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] > cdf).sum(axis=1).astype(np.int32)


def _assemble(spec: GenerativeSpec, W: np.ndarray, codes: dict, y: np.ndarray) -> Dataset:
    columns = [TreatmentColumn(name=m.name, levels=m.levels, codes=codes[m.name])
               for m in spec.treatments]
    return Dataset(
        outcome_name=spec.outcome_name, outcome_kind=spec.outcome_kind, y=y,
        treatments=columns, covariate_names=spec.covariate_names, covariates=W,
    )


def ancestral_sample(spec: GenerativeSpec, n: int, seed: int, *tags) -> Dataset:
    """Draw covariates, then each treatment in declared order, then the outcome."""
    rng = rng_for(seed, "ancestral", *tags)
    W = _draw_covariates(spec, n, rng)
    codes = {}
    for mech in spec.treatments:
        codes[mech.name] = _categorical(mech.probabilities(W), rng)
    lp = spec.linear_predictor(W, codes)
    if spec.noise_family == "gaussian":
        y = lp + spec.sigma * rng.standard_normal(n)
    else:
        y = (rng.random(n) < _expit(lp)).astype(np.float64)
    return _assemble(spec, W, codes, y)


def null_sample(spec: GenerativeSpec, n: int, seed: int, *tags) -> Dataset:
    """Exact-null draw: outcome first, then treatments, then covariates.

    Everything is mutually independent; the outcome keeps its noise family
    around the intercept-only mean and the treatments keep their marginal
    level frequencies, so every contrast's truth is exactly zero.
    """
    rng = rng_for(seed, "null", *tags)
    base = spec.intercept()
    if spec.noise_family == "gaussian":
        y = base + spec.sigma * rng.standard_normal(n)
    else:
        p = float(_expit(np.array([base]))[0])
        y = (rng.random(n) < p).astype(np.float64)
    codes = {}
    for mech in spec.treatments:
        marg = np.broadcast_to(mech.marginal_probabilities(), (n, len(mech.levels)))
        codes[mech.name] = _categorical(marg, rng)
    W = _draw_covariates(spec, n, rng)
    return _assemble(spec, W, codes, y)


@dataclass
class TruthEstimate:
    value: float
    mc_se: float
    draws: int


def monte_carlo_truth(spec: GenerativeSpec, estimand: Estimand, draws: int = 200_000,
                      seed: int = 0) -> TruthEstimate:
    """Estimate the estimand's truth by averaging exact conditional means over W."""
    rng = rng_for(seed, "truth", estimand.name)
    W = _draw_covariates(spec, draws, rng)
    data = _assemble(
        spec, W,
        {m.name: np.zeros(draws, dtype=np.int32) for m in spec.treatments},
        np.zeros(draws),
    )
    rows = np.arange(draws)
    total = np.zeros(draws)
    for term in expand_estimand(estimand):
        total += term.sign * spec.true_mean(data, rows, estimand.treatments, term.levels)
    return TruthEstimate(value=float(total.mean()),
                         mc_se=float(total.std(ddof=1) / np.sqrt(draws)),
                         draws=draws)


@dataclass
class VonMisesReport:
    """Monte Carlo decomposition of the plug-in error expansion.

    ``plugin_gap`` estimates the plug-in bias of the supplied outcome
    model, ``correction`` the mean of the weighted-residual term, and
    ``remainder`` the second-order product term.  Their signed sum is
    ``residual``, which is zero in expectation regardless of how wrong the
    supplied models are, so |residual| beyond a few ``residual_se`` marks
    an implementation inconsistency.
    """

    plugin_gap: float
    correction: float
    remainder: float
    residual: float
    residual_se: float
    draws: int

    def to_dict(self) -> dict:
        return {
            "plugin_gap": self.plugin_gap, "correction": self.correction,
            "remainder": self.remainder, "residual": self.residual,
            "residual_se": self.residual_se, "draws": self.draws,
        }


def von_mises_check(spec: GenerativeSpec, estimand: Estimand, outcome_model,
                    propensity_model, draws: int = 100_000, seed: int = 0) -> VonMisesReport:
    """Check the first-order expansion identity draw by draw.

    For each fresh observation the statistic combines the plug-in gap of
    the fitted outcome model, the inverse-probability weighted residual,
    and the exact second-order remainder built from the generative truth.
    Its conditional mean given covariates is identically zero, so the
    Monte Carlo mean must vanish within noise.
    """
    data = ancestral_sample(spec, draws, seed, "vonmises")
    rows = np.arange(data.n)
    terms = expand_estimand(estimand)
    q_obs = np.asarray(outcome_model.predict(data, rows), dtype=np.float64)
    plugin_gap = np.zeros(draws)
    remainder = np.zeros(draws)
    H = np.zeros(draws)
    for term in terms:
        qhat = np.asarray(outcome_model.predict(data, rows, levels=term.levels),
                          dtype=np.float64)
        mu0 = spec.true_mean(data, rows, estimand.treatments, term.levels)
        ghat = np.asarray(propensity_model.joint_probability(data, rows, term.levels),
                          dtype=np.float64)
        g0 = spec.true_propensity(data, rows, estimand.treatments, term.levels)
        gap = qhat - mu0
        plugin_gap += term.sign * gap
        remainder += term.sign * gap * (ghat - g0) / ghat
        match = data.match_mask(estimand.treatments, term.levels, rows)
        H += term.sign * match / ghat
    t = plugin_gap + H * (data.y[rows] - q_obs) - remainder
    return VonMisesReport(
        plugin_gap=float(plugin_gap.mean()),
        correction=float((H * (data.y[rows] - q_obs)).mean()),
        remainder=float(remainder.mean()),
        residual=float(t.mean()),
        residual_se=float(t.std(ddof=1) / np.sqrt(draws)),
        draws=draws,
    )


def bootstrap_metrics(estimates, truth) -> dict:
    """Replicate-level accuracy summary.

    ``bias2`` is the mean squared distance of the replicates from the
    truth (which folds sampling spread in with systematic offset);
    ``centered_bias2`` isolates the offset as the squared distance of the
    replicate mean from the truth; ``variance`` is the trace of the
    replicate covariance; ``mse`` is their sum.
    """
    est = np.asarray(estimates, dtype=np.float64)
    if est.ndim == 1:
        est = est[:, None]
    if est.ndim != 2 or est.shape[0] < 2:
        raise DataError("need at least two replicate estimates")
    truth_vec = np.atleast_1d(np.asarray(truth, dtype=np.float64))
    if truth_vec.shape != (est.shape[1],):
        raise DataError(f"truth must have {est.shape[1]} component(s)")
    diff = est - truth_vec
    bias2 = float((diff ** 2).sum(axis=1).mean())
    centered = est - est.mean(axis=0)
    variance = float((centered ** 2).sum() / (est.shape[0] - 1))
    center_bias2 = float(((est.mean(axis=0) - truth_vec) ** 2).sum())
    return {
        "bias2": bias2,
        "variance": variance,
        "mse": bias2 + variance,
        "centered_bias2": center_bias2,
        "replicates": est.shape[0],
    }


def _worker_count(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([(THREADS_ENV, f"not an integer: {env!r}")]) from None
    return 1


@dataclass
class EvaluationResult:
    """Replicated-study summaries plus the raw per-replicate records."""

    metric_rows: list = field(default_factory=list)
    coverage_rows: list = field(default_factory=list)
    records: list = field(default_factory=list)
    truths: dict = field(default_factory=dict)

    METRIC_FIELDS = ("estimator", "estimand", "n", "threshold", "coverage",
                     "power", "bias2", "variance", "mse", "b")
    COVERAGE_FIELDS = ("level", "estimator", "estimand", "covered", "total",
                       "coverage", "wilson_low", "wilson_high")

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.METRIC_FIELDS)
            writer.writeheader()
            writer.writerows(self.metric_rows)
        with open(os.path.join(out_dir, "coverage_summary.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.COVERAGE_FIELDS)
            writer.writeheader()
            writer.writerows(self.coverage_rows)


def _replicate_task(spec, estimands, estimators, n, seed, b, sampler, learners,
                    folds, alpha, truths, estimator_fns):
    data = (null_sample if sampler == "null" else ancestral_sample)(spec, n, seed, b)
    fold_seed = int(rng_for(seed, "folds", b).integers(2 ** 62))
    needs_cv = any(e.startswith("cv_") for e in estimators)
    cache = {}
    out = []
    for estimand in estimands:
        decision = frequency_filter(data, estimand, 0.0)
        base = {
            "replicate": b,
            "estimand": estimand.name,
            "min_frequency": min(decision.frequencies) if decision.frequencies else 0.0,
            "positive_counts": bool(decision.keep),
        }
        truth = truths[estimand.name]
        fit = None
        fit_error = None
        if decision.keep and estimator_fns is None:
            try:
                fit = fit_nuisances(data, estimand, learners,
                                    folds=folds if needs_cv else None,
                                    seed=fold_seed, cache=cache)
            except EstimationError as exc:
                fit_error = str(exc)
        for name in estimators:
            rec = dict(base)
            rec["estimator"] = name
            if not decision.keep or fit_error is not None:
                rec.update(psi=np.nan, se=np.nan, covered=False, rejected=False,
                           error=fit_error)
                out.append(rec)
                continue
            try:
                if estimator_fns is not None:
                    psi, se = estimator_fns[name](
                        data, estimand, rng_for(seed, "mock", b, name, estimand.name))
                else:
                    report = estimate(data, estimand, fit, name)
                    psi, se = report.psi, report.se
            except EstimationError as exc:
                rec.update(psi=np.nan, se=np.nan, covered=False, rejected=False,
                           error=str(exc))
                out.append(rec)
                continue
            lo, hi = wald_ci(psi, se, alpha)
            rec.update(psi=float(psi), se=float(se),
                       covered=bool(lo <= truth <= hi),
                       rejected=bool(pvalue(psi, se, 0.0) < alpha), error=None)
            out.append(rec)
    return out


def evaluate_grid(spec: GenerativeSpec, estimands, estimators, n: int, replicates: int,
                  thresholds=(0.0,), alpha: float = 0.05, seed: int = 0,
                  sampler: str = "ancestral", learners=None, folds: int = 3,
                  workers: int | None = None, estimator_fns=None, truths=None,
                  truth_draws: int = 200_000) -> EvaluationResult:
    """Replicated estimation study over a grid of frequency thresholds.

    Every estimand is estimated in every replicate (when its vertices are
    populated); threshold rows then average the subset of replicates whose
    minimum vertex frequency clears the threshold, so one set of fits
    serves the whole sweep.  Tasks run in a thread pool and results are
    reassembled in replicate order, which keeps outputs identical for any
    worker count.
    """
    estimands = list(estimands)
    estimators = list(estimators)
    if estimator_fns is None:
        for name in estimators:
            if name not in ESTIMATOR_NAMES:
                raise ValueError(f"unknown estimator {name!r}")
    else:
        missing = [e for e in estimators if e not in estimator_fns]
        if missing:
            raise ValueError(f"no injected estimator for {missing}")
    if sampler not in ("ancestral", "null"):
        raise ValueError("sampler must be 'ancestral' or 'null'")
    thresholds = [float(t) for t in thresholds]
    if any(t < 0.0 or t >= 1.0 for t in thresholds):
        raise ValueError("thresholds must lie in [0, 1)")
    if learners is None:
        kind = "ridge_linear" if spec.outcome_kind == "continuous" else "ridge_logistic"
        learners = [LearnerSpec(kind=kind, lam=1.0, interactions=True)]

    if truths is None:
        truths = {}
        for estimand in estimands:
            if sampler == "null":
                truths[estimand.name] = (spec.null_outcome_mean()
                                         if estimand.kind == "counterfactual_mean" else 0.0)
            else:
                truths[estimand.name] = monte_carlo_truth(
                    spec, estimand, draws=truth_draws, seed=seed).value
    else:
        truths = {e.name: float(truths[e.name]) for e in estimands}

    count = _worker_count(workers)
    tasks = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=count) as pool:
        for b in range(replicates):
            tasks[b] = pool.submit(
                _replicate_task, spec, estimands, estimators, n, seed, b, sampler,
                learners, folds, alpha, truths, estimator_fns,
            )
        records = []
        for b in range(replicates):
            records.extend(tasks[b].result())

    result = EvaluationResult(records=records, truths=dict(truths))
    by_cell = {}
    for rec in records:
        by_cell.setdefault((rec["estimator"], rec["estimand"]), []).append(rec)

    for name in estimators:
        for estimand in estimands:
            cell = by_cell.get((name, estimand.name), [])
            for threshold in thresholds:
                kept = [r for r in cell
                        if r["positive_counts"] and r["error"] is None
                        and r["min_frequency"] >= threshold]
                row = {"estimator": name, "estimand": estimand.name, "n": n,
                       "threshold": threshold, "b": len(kept)}
                if len(kept) >= 2:
                    psis = [r["psi"] for r in kept]
                    metrics = bootstrap_metrics(psis, truths[estimand.name])
                    row.update(
                        coverage=np.mean([r["covered"] for r in kept]),
                        power=np.mean([r["rejected"] for r in kept]),
                        bias2=metrics["bias2"], variance=metrics["variance"],
                        mse=metrics["mse"],
                    )
                else:
                    row.update(coverage=np.nan, power=np.nan, bias2=np.nan,
                               variance=np.nan, mse=np.nan)
                result.metric_rows.append(row)

    def _coverage_row(level, name, estimand_name, cells):
        kept = [r for r in cells if r["positive_counts"] and r["error"] is None]
        covered = sum(1 for r in kept if r["covered"])
        total = len(kept)
        if total:
            lo, hi = wilson_interval(covered, total, alpha)
            cov = covered / total
        else:
            lo = hi = cov = np.nan
        return {"level": level, "estimator": name, "estimand": estimand_name,
                "covered": covered, "total": total, "coverage": cov,
                "wilson_low": lo, "wilson_high": hi}

    for name in estimators:
        for estimand in estimands:
            result.coverage_rows.append(_coverage_row(
                "component", name, estimand.name, by_cell.get((name, estimand.name), [])))
    for estimand in estimands:
        pooled = [r for key, cell in by_cell.items() if key[1] == estimand.name
                  for r in cell]
        result.coverage_rows.append(_coverage_row("estimand", "", estimand.name, pooled))
    for name in estimators:
        pooled = [r for key, cell in by_cell.items() if key[0] == name for r in cell]
        result.coverage_rows.append(_coverage_row("estimator", name, "", pooled))
    return result
