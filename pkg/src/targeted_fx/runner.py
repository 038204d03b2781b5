"""Batch estimation runs with deterministic, reproducible outputs.

A run estimates every configured estimand with every configured estimator,
sharing propensity fits across estimands with the same treatment set and
training rows.  Outputs land in the configured directory:

- ``results.jsonl``: one record per estimate, filtered estimand, failed
  estimate, composite, and joint test, in a fixed order that does not
  depend on the worker count.  Records never contain timestamps, so reruns
  are byte-identical.  A failing estimand never aborts the batch; it is
  recorded and the remaining estimands still run.
- ``eif.bin``: influence vectors as raw little-endian float64, one full
  dataset-length vector per stored record, NaN at rows that did not enter
  estimation.  The ``eif_record`` field of a JSONL record gives its
  zero-based vector index, or null when the record has no vector.
- ``run_manifest.json``: hashes, versions, seeds, and the only timestamp.
"""

from __future__ import annotations

import concurrent.futures
import datetime
import hashlib
import json
import os
import sys
import threading
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .config import DEFAULT_SVP_CUTOFF, RunConfig, SVPConfig
from .dataset import load_csv
from .errors import DataError, EstimationError
from .estimands import frequency_filter
from .inference import (allelic_effect_difference, hotelling,
                        linear_combination, pvalue, wald_ci)
from .nuisance import fit_nuisances
from .relatedness import load_grm, svp_ci
from .simulation import THREADS_ENV, _worker_count
from .targeting import estimate

try:
    from importlib.metadata import version as _dist_version
    PACKAGE_VERSION = _dist_version("targeted-fx")
except Exception:  # not installed as a distribution
    PACKAGE_VERSION = "0.1.0"


class _LockedCache:
    """Propensity-fit cache safe to share across worker threads.

    The lock is held while fitting, so each distinct key is fitted exactly
    once and the reported fit count does not depend on scheduling.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._store = {}

    def get_or_create(self, key, factory):
        with self._lock:
            if key not in self._store:
                self._store[key] = factory()
            return self._store[key]

    def __len__(self):
        return len(self._store)


@dataclass
class RunResult:
    records: list
    manifest: dict
    filtered: int
    failed: int
    out_dir: str
    eif_vectors: list = field(default_factory=list)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _estimand_task(data, estimand, config: RunConfig, cache):
    """All estimators for one estimand; returns (records, reports, eifs)."""
    decision = frequency_filter(data, estimand, config.threshold)
    if not decision.keep:
        record = {
            "type": "filtered",
            "estimand": estimand.describe(),
            "filter": decision.to_dict(),
            "eif_record": None,
        }
        return [record], {}, []
    needs_cv = any(e.startswith("cv_") for e in config.estimators)
    try:
        fit = fit_nuisances(
            data, estimand, config.learners, propensity_mode=config.propensity_mode,
            propensity_lam=config.propensity_lam,
            folds=config.folds if needs_cv else None, seed=config.seed, cache=cache,
        )
    except EstimationError as exc:
        record = {
            "type": "error",
            "estimand": estimand.describe(),
            "stage": "nuisance",
            "reason": str(exc),
            "eif_record": None,
        }
        return [record], {}, []
    records, reports, eifs = [], {}, []
    for name in config.estimators:
        try:
            report = estimate(data, estimand, fit, name, decision)
        except EstimationError as exc:
            records.append({
                "type": "error",
                "estimand": estimand.describe(),
                "stage": "estimate",
                "estimator": name,
                "reason": str(exc),
                "eif_record": None,
            })
            continue
        lo, hi = wald_ci(report.psi, report.se, config.alpha)
        record = report.to_dict()
        record["type"] = "estimate"
        record["ci"] = [lo, hi]
        record["alpha"] = config.alpha
        record["p_value"] = pvalue(report.psi, report.se)
        records.append(record)
        reports[name] = report
        eifs.append(_full_length_eif(report, data.n))
    return records, reports, eifs


def _full_length_eif(report, n_total: int) -> np.ndarray:
    vec = np.full(n_total, np.nan)
    vec[report.row_index] = report.eif
    return vec


def _apply_svp(record: dict, report, grm, svp: SVPConfig, alpha: float) -> None:
    result = svp_ci(report, grm, taus=svp.taus, rule=svp.rule, alpha=alpha,
                    rel_tol=svp.rel_tol)
    record["svp"] = result.to_dict()


def run_estimation(config: RunConfig, config_bytes: bytes | None = None,
                   workers: int | None = None) -> RunResult:
    """Execute a run configuration and write its outputs.

    Estimands are processed in a thread pool; records are assembled in
    configuration order afterward, so outputs are identical for any worker
    count.
    """
    ds = config.dataset
    data = load_csv(ds.path, ds.outcome_name, ds.outcome_kind, ds.treatments,
                    ds.covariate_names, ds.extra_covariates)
    grm = None
    if config.svp is not None:
        grm = load_grm(config.svp.grm_path)
        if grm.n != data.n:
            raise DataError(
                f"relatedness matrix covers {grm.n} samples but the dataset "
                f"has {data.n}; they must align row for row"
            )
    cache = _LockedCache()
    count = _worker_count(workers)
    with concurrent.futures.ThreadPoolExecutor(max_workers=count) as pool:
        futures = [pool.submit(_estimand_task, data, estimand, config, cache)
                   for estimand in config.estimands]
        outputs = [f.result() for f in futures]

    records, eif_vectors = [], []
    reports_by_key = {}
    filtered = failed = 0
    for estimand, (recs, reports, eifs) in zip(config.estimands, outputs):
        vec_iter = iter(eifs)
        for rec in recs:
            if rec["type"] == "filtered":
                filtered += 1
                records.append(rec)
                continue
            if rec["type"] == "error":
                failed += 1
                records.append(rec)
                continue
            rec["eif_record"] = len(eif_vectors)
            eif_vectors.append(next(vec_iter))
            records.append(rec)
        for name, report in reports.items():
            reports_by_key[(name, estimand.name)] = report

    if grm is not None:
        for rec in records:
            if rec["type"] != "estimate" or rec["p_value"] >= config.svp.cutoff:
                continue
            report = reports_by_key[(rec["estimator"], rec["estimand"]["name"])]
            _apply_svp(rec, report, grm, config.svp, config.alpha)

    for comp in config.composites:
        for name in config.estimators:
            keys = [(name, ref) for ref in comp.of]
            missing = [ref for (_, ref) in keys if (name, ref) not in reports_by_key]
            if missing:
                records.append({
                    "type": "composite", "name": comp.name, "estimator": name,
                    "status": "unavailable",
                    "reason": f"estimand(s) {missing} were filtered or failed",
                    "eif_record": None,
                })
                continue
            parts = [reports_by_key[k] for k in keys]
            if comp.transform == "difference":
                derived = allelic_effect_difference(parts[0], parts[1], name=comp.name)
            else:
                derived = linear_combination(parts, comp.coefficients, name=comp.name)
            lo, hi = wald_ci(derived.psi, derived.se, config.alpha)
            record = {
                "type": "composite", "name": comp.name, "estimator": name,
                "status": "ok", "transform": comp.transform, "of": list(comp.of),
                "psi": derived.psi, "variance": derived.variance, "se": derived.se,
                "n": derived.n, "ci": [lo, hi], "alpha": config.alpha,
                "p_value": pvalue(derived.psi, derived.se),
                "gradient": derived.gradient.tolist(),
                "eif_record": len(eif_vectors),
            }
            if grm is not None and record["p_value"] < config.svp.cutoff:
                _apply_svp(record, derived, grm, config.svp, config.alpha)
            eif_vectors.append(_full_length_eif(derived, data.n))
            records.append(record)

    for test in config.joint_tests:
        for name in config.estimators:
            keys = [(name, ref) for ref in test.of]
            missing = [ref for (_, ref) in keys if (name, ref) not in reports_by_key]
            if missing:
                records.append({
                    "type": "joint", "name": test.name, "estimator": name,
                    "status": "unavailable",
                    "reason": f"estimand(s) {missing} were filtered or failed",
                    "eif_record": None,
                })
                continue
            parts = [reports_by_key[k] for k in keys]
            try:
                result = hotelling(parts, null=test.null)
            except EstimationError as exc:
                records.append({
                    "type": "joint", "name": test.name, "estimator": name,
                    "status": "error", "reason": str(exc), "eif_record": None,
                })
                continue
            record = {"type": "joint", "name": test.name, "estimator": name,
                      "status": "ok", "of": list(test.of), "eif_record": None}
            record.update(result.to_dict())
            del record["psi"]
            record["estimates"] = result.psi.tolist()
            records.append(record)

    manifest = {
        "package_version": PACKAGE_VERSION,
        "python_version": sys.version.split()[0],
        "numpy_version": np.__version__,
        "config_sha256": hashlib.sha256(config_bytes).hexdigest()
        if config_bytes is not None else None,
        "dataset_path": ds.path,
        "dataset_sha256": _sha256_file(ds.path),
        "n": data.n,
        "seed": config.seed,
        "estimand_count": len(config.estimands),
        "estimator_count": len(config.estimators),
        "filtered_estimands": filtered,
        "failed_estimates": failed,
        "propensity_fits": len(cache),
        "cv_fold_sharing": any(e.startswith("cv_") for e in config.estimators),
        "threads": count,
        "threads_env": os.environ.get(THREADS_ENV),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }

    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "results.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    with open(os.path.join(config.out_dir, "eif.bin"), "wb") as fh:
        for vec in eif_vectors:
            fh.write(vec.astype("<f8").tobytes())
    with open(os.path.join(config.out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return RunResult(records=records, manifest=manifest, filtered=filtered,
                     failed=failed, out_dir=config.out_dir,
                     eif_vectors=eif_vectors)


def read_eif_vectors(results_dir) -> tuple[list, np.ndarray, int]:
    """Load a finished run's records and sidecar vectors."""
    with open(os.path.join(results_dir, "run_manifest.json")) as fh:
        manifest = json.load(fh)
    n = int(manifest["n"])
    records = []
    with open(os.path.join(results_dir, "results.jsonl")) as fh:
        for line in fh:
            records.append(json.loads(line))
    raw = np.fromfile(os.path.join(results_dir, "eif.bin"), dtype="<f8")
    stored = sum(1 for r in records if r.get("eif_record") is not None)
    if raw.size != stored * n:
        raise DataError(
            f"influence sidecar holds {raw.size} values, expected {stored} x {n}"
        )
    return records, raw.reshape(stored, n) if stored else raw.reshape(0, n), n


def run_svp(results_dir, grm_path, taus=None, rule: str = "max",
            alpha: float = 0.05, rel_tol: float = 0.005,
            cutoff: float = DEFAULT_SVP_CUTOFF) -> list:
    """Relatedness-corrected variances for a finished run's findings.

    Correction is applied to records whose uncorrected p value falls below
    ``cutoff``; when nothing qualifies the report is empty.  Each stored
    influence vector is restricted to its non-missing rows and those row
    positions address the relatedness matrix, which therefore must cover
    the full original dataset.
    """
    records, vectors, n = read_eif_vectors(results_dir)
    grm = load_grm(grm_path)
    if grm.n != n:
        raise DataError(
            f"relatedness matrix covers {grm.n} samples but the run used {n}"
        )
    out = []
    for i, rec in enumerate(records):
        idx = rec.get("eif_record")
        if idx is None or not (rec.get("p_value", 1.0) < cutoff):
            continue
        vec = vectors[idx]
        rows = np.flatnonzero(~np.isnan(vec))
        psi = rec["psi"]
        shim = SimpleNamespace(psi=psi, variance=rec["variance"],
                               n=len(rows), eif=vec[rows], row_index=rows)
        result = svp_ci(shim, grm, taus=taus, rule=rule, alpha=alpha, rel_tol=rel_tol)
        entry = {"record": i, "type": rec["type"]}
        if rec["type"] == "estimate":
            entry["estimator"] = rec["estimator"]
            entry["estimand"] = rec["estimand"]["name"]
        else:
            entry["estimator"] = rec.get("estimator")
            entry["name"] = rec.get("name")
        entry["p_value_iid"] = rec["p_value"]
        entry["svp"] = result.to_dict()
        out.append(entry)
    path = os.path.join(results_dir, "svp.jsonl")
    with open(path, "w") as fh:
        for entry in out:
            fh.write(json.dumps(entry) + "\n")
    return out
