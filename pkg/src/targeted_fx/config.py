"""Strict JSON configuration for the command line runner.

Unknown keys are rejected, every complaint carries a slash-separated path
to the offending entry, and relative paths resolve against the directory
containing the configuration file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .estimands import ESTIMAND_KINDS, Estimand
from .learners import LEARNER_KINDS, LearnerSpec
from .simulation import GenerativeSpec, parse_generative_spec
from .targeting import ESTIMATOR_NAMES

DEFAULT_THRESHOLD = 0.01
DEFAULT_FOLDS = 3
DEFAULT_ALPHA = 0.05
DEFAULT_TAU_COUNT = 101
DEFAULT_TAU_MAX = 1.0
DEFAULT_SVP_CUTOFF = 0.07


def _fail(path, message):
    raise ConfigError([(path, message)])


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        _fail(path, "must be an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        _fail(path, f"unknown keys {sorted(unknown)}")


def _get_str(obj, key, path, default=None, required=False):
    if key not in obj:
        if required:
            _fail(f"{path}/{key}", "missing")
        return default
    v = obj[key]
    if not isinstance(v, str) or not v:
        _fail(f"{path}/{key}", "must be a nonempty string")
    return v


def _get_number(obj, key, path, default=None, required=False,
                minimum=None, maximum=None, strict_min=False, strict_max=False):
    if key not in obj:
        if required:
            _fail(f"{path}/{key}", "missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{path}/{key}", "must be a number")
    v = float(v)
    if minimum is not None and (v <= minimum if strict_min else v < minimum):
        _fail(f"{path}/{key}", f"must be {'>' if strict_min else '>='} {minimum}")
    if maximum is not None and (v >= maximum if strict_max else v > maximum):
        _fail(f"{path}/{key}", f"must be {'<' if strict_max else '<='} {maximum}")
    return v


def _get_int(obj, key, path, default=None, required=False, minimum=None):
    if key not in obj:
        if required:
            _fail(f"{path}/{key}", "missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{path}/{key}", "must be an integer")
    if minimum is not None and v < minimum:
        _fail(f"{path}/{key}", f"must be >= {minimum}")
    return v


def _get_list(obj, key, path, required=False, default=None):
    if key not in obj:
        if required:
            _fail(f"{path}/{key}", "missing")
        return [] if default is None else default
    v = obj[key]
    if not isinstance(v, list):
        _fail(f"{path}/{key}", "must be a list")
    return v


@dataclass
class DatasetConfig:
    path: str
    outcome_name: str
    outcome_kind: str
    treatments: list            # (name, levels) pairs
    covariate_names: list
    extra_covariates: list      # (name, kind) pairs


@dataclass
class CompositeConfig:
    name: str
    of: list
    transform: str              # "difference" | "linear"
    coefficients: list | None


@dataclass
class JointTestConfig:
    name: str
    of: list
    null: list | None


@dataclass
class SVPConfig:
    grm_path: str
    taus: np.ndarray
    rule: str
    rel_tol: float
    cutoff: float


@dataclass
class RunConfig:
    dataset: DatasetConfig
    estimands: list
    estimators: list
    learners: list
    propensity_mode: str
    propensity_lam: float
    folds: int
    threshold: float
    alpha: float
    seed: int
    composites: list = field(default_factory=list)
    joint_tests: list = field(default_factory=list)
    svp: SVPConfig | None = None
    out_dir: str = "."


@dataclass
class EvalConfig:
    spec: GenerativeSpec
    estimands: list
    estimators: list
    n: int
    replicates: int
    thresholds: list
    sampler: str
    alpha: float
    seed: int
    folds: int
    learners: list
    truth_draws: int
    out_dir: str


@dataclass
class SimulateConfig:
    spec: GenerativeSpec
    n: int
    seed: int
    output: str


def _parse_dataset(raw, base_dir) -> DatasetConfig:
    path = "dataset"
    _check_keys(raw, {"path", "outcome", "treatments", "covariates", "extra_covariates"},
                path)
    csv_path = _get_str(raw, "path", path, required=True)
    outcome = raw.get("outcome")
    _check_keys(outcome if isinstance(outcome, dict) else None, {"name", "kind"},
                f"{path}/outcome")
    oname = _get_str(outcome, "name", f"{path}/outcome", required=True)
    okind = _get_str(outcome, "kind", f"{path}/outcome", required=True)
    if okind not in ("continuous", "binary"):
        _fail(f"{path}/outcome/kind", "must be 'continuous' or 'binary'")
    treatments = []
    for i, t in enumerate(_get_list(raw, "treatments", path, required=True)):
        where = f"{path}/treatments/{i}"
        _check_keys(t, {"name", "levels"}, where)
        name = _get_str(t, "name", where, required=True)
        levels = _get_list(t, "levels", where, required=True)
        if len(levels) < 2:
            _fail(f"{where}/levels", "must list at least two levels")
        treatments.append((name, tuple(str(v) for v in levels)))
    covars = _get_list(raw, "covariates", path, required=True)
    if not all(isinstance(c, str) and c for c in covars):
        _fail(f"{path}/covariates", "must be nonempty strings")
    extra = []
    for i, e in enumerate(_get_list(raw, "extra_covariates", path)):
        where = f"{path}/extra_covariates/{i}"
        _check_keys(e, {"name", "kind"}, where)
        kind = _get_str(e, "kind", where, required=True)
        if kind not in ("numeric", "categorical"):
            _fail(f"{where}/kind", "must be 'numeric' or 'categorical'")
        extra.append((_get_str(e, "name", where, required=True), kind))
    return DatasetConfig(
        path=os.path.join(base_dir, csv_path), outcome_name=oname, outcome_kind=okind,
        treatments=treatments, covariate_names=list(covars), extra_covariates=extra,
    )


def _parse_estimands(raw_list, declared_levels: dict, outcome_name: str,
                     path: str) -> list:
    """Expand estimand declarations, including all-pairs generators."""
    out = []
    for i, raw in enumerate(raw_list):
        where = f"{path}/{i}"
        _check_keys(raw, {"kind", "treatments", "from", "to", "name", "all_pairs"}, where)
        kind = _get_str(raw, "kind", where, required=True)
        if kind not in ESTIMAND_KINDS:
            _fail(f"{where}/kind", f"must be one of {sorted(ESTIMAND_KINDS)}")
        names = _get_list(raw, "treatments", where, required=True)
        for name in names:
            if name not in declared_levels:
                _fail(f"{where}/treatments", f"undeclared treatment {name!r}")
        all_pairs = raw.get("all_pairs", False)
        if not isinstance(all_pairs, bool):
            _fail(f"{where}/all_pairs", "must be true or false")
        if all_pairs:
            if kind == "counterfactual_mean":
                _fail(f"{where}/all_pairs", "not defined for counterfactual means")
            if "from" in raw or "to" in raw or "name" in raw:
                _fail(where, "all_pairs excludes from/to/name")
            pair_sets = []
            for name in names:
                levels = declared_levels[name]
                pair_sets.append([(levels[a], levels[b])
                                  for a in range(len(levels))
                                  for b in range(a + 1, len(levels))])
            combos = [[]]
            for pairs in pair_sets:
                combos = [c + [p] for c in combos for p in pairs]
            for combo in combos:
                out.append(Estimand(
                    kind=kind, treatments=tuple(names),
                    from_levels=tuple(p[0] for p in combo),
                    to_levels=tuple(p[1] for p in combo),
                    outcome=outcome_name,
                ))
            continue
        to = _get_list(raw, "to", where, required=True)
        to = tuple(str(v) for v in to)
        if kind == "counterfactual_mean":
            if "from" in raw:
                _fail(f"{where}/from", "not defined for counterfactual means")
            from_levels = None
        else:
            from_raw = _get_list(raw, "from", where, required=True)
            from_levels = tuple(str(v) for v in from_raw)
        for j, name in enumerate(names):
            levels = declared_levels[name]
            for value in ((to[j],) if from_levels is None else (from_levels[j], to[j])):
                if value not in levels:
                    _fail(where, f"level {value!r} is not declared for {name!r}")
        try:
            est = Estimand(kind=kind, treatments=tuple(names), from_levels=from_levels,
                           to_levels=to, outcome=outcome_name,
                           name=raw.get("name") or "")
        except Exception as exc:
            _fail(where, str(exc))
        out.append(est)
    seen = set()
    for est in out:
        if est.name in seen:
            _fail(path, f"duplicate estimand name {est.name!r}")
        seen.add(est.name)
    return out


def _parse_learners(raw_list, path) -> list:
    specs = []
    for i, raw in enumerate(raw_list):
        where = f"{path}/{i}"
        _check_keys(raw, {"kind", "lam", "interactions"}, where)
        kind = _get_str(raw, "kind", where, required=True)
        if kind not in LEARNER_KINDS:
            _fail(f"{where}/kind", f"must be one of {sorted(LEARNER_KINDS)}")
        lam = _get_number(raw, "lam", where, default=1.0, minimum=0.0)
        inter = raw.get("interactions", False)
        if not isinstance(inter, bool):
            _fail(f"{where}/interactions", "must be true or false")
        try:
            specs.append(LearnerSpec(kind=kind, lam=lam, interactions=inter))
        except Exception as exc:
            _fail(where, str(exc))
    if not specs:
        _fail(path, "must declare at least one learner")
    return specs


def _parse_taus(raw, path) -> np.ndarray:
    if raw is None:
        return np.linspace(0.0, DEFAULT_TAU_MAX, DEFAULT_TAU_COUNT)
    if isinstance(raw, list):
        if not raw or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                              for v in raw):
            _fail(path, "must be a nonempty list of numbers")
        return np.asarray([float(v) for v in raw])
    if isinstance(raw, dict):
        _check_keys(raw, {"count", "max"}, path)
        count = _get_int(raw, "count", path, default=DEFAULT_TAU_COUNT, minimum=2)
        upper = _get_number(raw, "max", path, default=DEFAULT_TAU_MAX,
                            minimum=0.0, strict_min=True, maximum=2.0)
        return np.linspace(0.0, upper, count)
    _fail(path, "must be a list of thresholds or {count, max}")


def parse_run_config(raw: dict, base_dir: str = ".") -> RunConfig:
    _check_keys(raw, {"dataset", "estimands", "estimators", "learners", "propensity",
                      "folds", "threshold", "alpha", "seed", "composites",
                      "joint_tests", "svp", "output"}, "")
    if not isinstance(raw.get("dataset"), dict):
        _fail("dataset", "missing or not an object")
    dataset = _parse_dataset(raw["dataset"], base_dir)
    declared = dict(dataset.treatments)
    if "estimands" not in raw:
        _fail("estimands", "missing")
    estimands = _parse_estimands(_get_list(raw, "estimands", "", required=True),
                                 declared, dataset.outcome_name, "estimands")
    if not estimands:
        _fail("estimands", "must declare at least one estimand")

    estimators = _get_list(raw, "estimators", "", required=True)
    if not estimators:
        _fail("estimators", "must name at least one estimator")
    for i, name in enumerate(estimators):
        if name not in ESTIMATOR_NAMES:
            _fail(f"estimators/{i}", f"must be one of {ESTIMATOR_NAMES}")
    if len(set(estimators)) != len(estimators):
        _fail("estimators", "names must be distinct")

    if "learners" in raw:
        learners = _parse_learners(_get_list(raw, "learners", ""), "learners")
    else:
        kind = "ridge_linear" if dataset.outcome_kind == "continuous" else "ridge_logistic"
        learners = [LearnerSpec(kind=kind, lam=1.0)]
    allowed = {"continuous": ("constant", "ridge_linear"),
               "binary": ("constant", "ridge_logistic")}[dataset.outcome_kind]
    for i, spec in enumerate(learners):
        if spec.kind not in allowed:
            _fail(f"learners/{i}/kind",
                  f"{spec.kind!r} does not fit a {dataset.outcome_kind} outcome")

    prop = raw.get("propensity", {})
    _check_keys(prop, {"mode", "lam"}, "propensity")
    mode = _get_str(prop, "mode", "propensity", default="factorized")
    if mode not in ("factorized", "joint"):
        _fail("propensity/mode", "must be 'factorized' or 'joint'")
    prop_lam = _get_number(prop, "lam", "propensity", default=1.0, minimum=0.0)

    folds = _get_int(raw, "folds", "", default=DEFAULT_FOLDS, minimum=2)
    threshold = _get_number(raw, "threshold", "", default=DEFAULT_THRESHOLD,
                            minimum=0.0, maximum=1.0, strict_max=True)
    alpha = _get_number(raw, "alpha", "", default=DEFAULT_ALPHA,
                        minimum=0.0, maximum=1.0, strict_min=True, strict_max=True)
    seed = _get_int(raw, "seed", "", default=0)

    names = {e.name for e in estimands}
    composites = []
    for i, c in enumerate(_get_list(raw, "composites", "")):
        where = f"composites/{i}"
        _check_keys(c, {"name", "of", "transform", "coefficients"}, where)
        cname = _get_str(c, "name", where, required=True)
        of = _get_list(c, "of", where, required=True)
        for ref in of:
            if ref not in names:
                _fail(f"{where}/of", f"unknown estimand {ref!r}")
        transform = _get_str(c, "transform", where, required=True)
        if transform not in ("difference", "linear"):
            _fail(f"{where}/transform", "must be 'difference' or 'linear'")
        coefficients = None
        if transform == "difference":
            if len(of) != 2:
                _fail(f"{where}/of", "difference needs exactly two estimands")
            if "coefficients" in c:
                _fail(f"{where}/coefficients", "not used by difference")
        else:
            coefficients = _get_list(c, "coefficients", where, required=True)
            if len(coefficients) != len(of):
                _fail(f"{where}/coefficients", "must match the length of 'of'")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       for v in coefficients):
                _fail(f"{where}/coefficients", "must be numbers")
            coefficients = [float(v) for v in coefficients]
        composites.append(CompositeConfig(name=cname, of=list(of), transform=transform,
                                          coefficients=coefficients))

    joint_tests = []
    for i, j in enumerate(_get_list(raw, "joint_tests", "")):
        where = f"joint_tests/{i}"
        _check_keys(j, {"name", "of", "null"}, where)
        jname = _get_str(j, "name", where, required=True)
        of = _get_list(j, "of", where, required=True)
        if len(of) < 1:
            _fail(f"{where}/of", "must name at least one estimand")
        for ref in of:
            if ref not in names:
                _fail(f"{where}/of", f"unknown estimand {ref!r}")
        null = None
        if "null" in j:
            null = _get_list(j, "null", where)
            if len(null) != len(of):
                _fail(f"{where}/null", "must match the length of 'of'")
            null = [float(v) for v in null]
        joint_tests.append(JointTestConfig(name=jname, of=list(of), null=null))

    svp = None
    if "svp" in raw:
        s = raw["svp"]
        _check_keys(s, {"grm", "taus", "rule", "rel_tol", "cutoff"}, "svp")
        grm = _get_str(s, "grm", "svp", required=True)
        rule = _get_str(s, "rule", "svp", default="max")
        if rule not in ("max", "stable"):
            _fail("svp/rule", "must be 'max' or 'stable'")
        rel_tol = _get_number(s, "rel_tol", "svp", default=0.005,
                              minimum=0.0, strict_min=True)
        cutoff = _get_number(s, "cutoff", "svp", default=DEFAULT_SVP_CUTOFF,
                             minimum=0.0, maximum=1.0, strict_min=True)
        svp = SVPConfig(grm_path=os.path.join(base_dir, grm),
                        taus=_parse_taus(s.get("taus"), "svp/taus"),
                        rule=rule, rel_tol=rel_tol, cutoff=cutoff)

    output = raw.get("output", {})
    _check_keys(output, {"directory"}, "output")
    out_dir = os.path.join(base_dir, _get_str(output, "directory", "output", default="."))

    return RunConfig(
        dataset=dataset, estimands=estimands, estimators=list(estimators),
        learners=learners, propensity_mode=mode, propensity_lam=prop_lam,
        folds=folds, threshold=threshold, alpha=alpha, seed=seed,
        composites=composites, joint_tests=joint_tests, svp=svp, out_dir=out_dir,
    )


def parse_eval_config(raw: dict, base_dir: str = ".") -> EvalConfig:
    _check_keys(raw, {"spec", "estimands", "estimators", "n", "replicates",
                      "thresholds", "sampler", "alpha", "seed", "folds",
                      "learners", "truth_draws", "output"}, "")
    if "spec" not in raw:
        _fail("spec", "missing")
    spec = parse_generative_spec(raw["spec"], base_dir)
    declared = {m.name: m.levels for m in spec.treatments}
    estimands = _parse_estimands(_get_list(raw, "estimands", "", required=True),
                                 declared, spec.outcome_name, "estimands")
    if not estimands:
        _fail("estimands", "must declare at least one estimand")
    estimators = _get_list(raw, "estimators", "", required=True)
    for i, name in enumerate(estimators):
        if name not in ESTIMATOR_NAMES:
            _fail(f"estimators/{i}", f"must be one of {ESTIMATOR_NAMES}")
    n = _get_int(raw, "n", "", required=True, minimum=2)
    replicates = _get_int(raw, "replicates", "", required=True, minimum=2)
    thresholds = _get_list(raw, "thresholds", "", default=[0.0])
    if not thresholds:
        thresholds = [0.0]
    for i, t in enumerate(thresholds):
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0.0 <= t < 1.0:
            _fail(f"thresholds/{i}", "must be a number in [0, 1)")
    sampler = _get_str(raw, "sampler", "", default="ancestral")
    if sampler not in ("ancestral", "null"):
        _fail("sampler", "must be 'ancestral' or 'null'")
    alpha = _get_number(raw, "alpha", "", default=DEFAULT_ALPHA,
                        minimum=0.0, maximum=1.0, strict_min=True, strict_max=True)
    seed = _get_int(raw, "seed", "", default=0)
    folds = _get_int(raw, "folds", "", default=DEFAULT_FOLDS, minimum=2)
    if "learners" in raw:
        learners = _parse_learners(_get_list(raw, "learners", ""), "learners")
    else:
        kind = "ridge_linear" if spec.outcome_kind == "continuous" else "ridge_logistic"
        learners = [LearnerSpec(kind=kind, lam=1.0, interactions=True)]
    allowed = {"continuous": ("constant", "ridge_linear"),
               "binary": ("constant", "ridge_logistic")}[spec.outcome_kind]
    for i, lspec in enumerate(learners):
        if lspec.kind not in allowed:
            _fail(f"learners/{i}/kind",
                  f"{lspec.kind!r} does not fit a {spec.outcome_kind} outcome")
    truth_draws = _get_int(raw, "truth_draws", "", default=200_000, minimum=1000)
    output = raw.get("output", {})
    _check_keys(output, {"directory"}, "output")
    out_dir = os.path.join(base_dir, _get_str(output, "directory", "output", default="."))
    return EvalConfig(
        spec=spec, estimands=estimands, estimators=list(estimators), n=n,
        replicates=replicates, thresholds=[float(t) for t in thresholds],
        sampler=sampler, alpha=alpha, seed=seed, folds=folds, learners=learners,
        truth_draws=truth_draws, out_dir=out_dir,
    )


def parse_simulate_config(raw: dict, base_dir: str = ".") -> SimulateConfig:
    _check_keys(raw, {"spec", "n", "seed", "output"}, "")
    if "spec" not in raw:
        _fail("spec", "missing")
    spec = parse_generative_spec(raw["spec"], base_dir)
    n = _get_int(raw, "n", "", required=True, minimum=1)
    seed = _get_int(raw, "seed", "", default=0)
    output = _get_str(raw, "output", "", required=True)
    return SimulateConfig(spec=spec, n=n, seed=seed,
                          output=os.path.join(base_dir, output))


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError([("", f"cannot read {path}: {exc}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"{path} is not valid JSON: {exc}")]) from None


def load_run_config(path) -> RunConfig:
    return parse_run_config(load_json(path), os.path.dirname(os.path.abspath(path)))


def load_eval_config(path) -> EvalConfig:
    return parse_eval_config(load_json(path), os.path.dirname(os.path.abspath(path)))


def load_simulate_config(path) -> SimulateConfig:
    return parse_simulate_config(load_json(path), os.path.dirname(os.path.abspath(path)))
