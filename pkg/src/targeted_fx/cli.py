"""Command line interface.

Exit codes: 0 on a clean run, 2 when a run completed but at least one
estimand was dropped by the frequency filter or failed during estimation
(partial outputs are still written), 3 on configuration, data, or i/o
errors that prevent a run.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import (DEFAULT_SVP_CUTOFF, load_eval_config, load_run_config,
                     load_simulate_config)
from .dataset import save_csv
from .errors import ConfigError, DataError, EstimationError
from .relatedness import compute_grm, load_genotypes, save_grm
from .runner import run_estimation, run_svp
from .simulation import ancestral_sample, evaluate_grid, null_sample


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="targeted-fx",
        description="Targeted estimation of treatment interaction effects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run configured estimators on a dataset")
    est.add_argument("--config", required=True, help="JSON run configuration")
    est.add_argument("--workers", type=int, default=None,
                     help="thread count (default: TARGETED_FX_THREADS or 1)")

    svp = sub.add_parser("svp", help="relatedness-corrected variances for a finished run")
    svp.add_argument("--results", required=True, help="directory with results.jsonl")
    svp.add_argument("--grm", required=True, help="relatedness matrix file")
    svp.add_argument("--taus", default=None,
                     help="comma-separated thresholds (default: 101 points on [0, 1])")
    svp.add_argument("--tau-count", type=int, default=None,
                     help="grid size when --taus is not given")
    svp.add_argument("--tau-max", type=float, default=None,
                     help="grid upper bound when --taus is not given (at most 2)")
    svp.add_argument("--rule", choices=["max", "stable"], default="max")
    svp.add_argument("--alpha", type=float, default=0.05)
    svp.add_argument("--cutoff", type=float, default=DEFAULT_SVP_CUTOFF,
                     help="correct only records with uncorrected p below this "
                          f"(default {DEFAULT_SVP_CUTOFF})")

    grm = sub.add_parser("grm", help="compute a relatedness matrix from a dosage CSV")
    grm.add_argument("--genotypes", required=True, help="CSV of dosages in [0, 2]")
    grm.add_argument("--out", required=True, help="output matrix file")

    sim = sub.add_parser("simulate", help="draw a synthetic dataset to CSV")
    sim.add_argument("mode", choices=["spec", "null"],
                     help="'spec' draws from the generative model, 'null' breaks "
                          "all dependence")
    sim.add_argument("--config", required=True, help="JSON simulate configuration")

    ev = sub.add_parser("evaluate", help="replicated estimator evaluation grid")
    ev.add_argument("--config", required=True, help="JSON evaluation configuration")
    ev.add_argument("--workers", type=int, default=None,
                    help="thread count (default: TARGETED_FX_THREADS or 1)")
    return parser


def _cmd_estimate(args) -> int:
    config = load_run_config(args.config)
    with open(args.config, "rb") as fh:
        config_bytes = fh.read()
    result = run_estimation(config, config_bytes=config_bytes, workers=args.workers)
    estimates = sum(1 for r in result.records if r["type"] == "estimate")
    print(f"wrote {len(result.records)} records ({estimates} estimates, "
          f"{result.filtered} filtered estimands, {result.failed} failures) "
          f"to {result.out_dir}")
    return 2 if result.filtered or result.failed else 0


def _svp_taus(args):
    if args.taus is not None:
        if args.tau_count is not None or args.tau_max is not None:
            raise ConfigError([("taus", "--taus excludes --tau-count/--tau-max")])
        try:
            values = [float(v) for v in args.taus.split(",") if v.strip()]
        except ValueError:
            raise ConfigError([("taus", f"not a comma-separated float list: "
                                        f"{args.taus!r}")]) from None
        if not values:
            raise ConfigError([("taus", "empty threshold list")])
        return np.asarray(values)
    if args.tau_count is not None or args.tau_max is not None:
        count = args.tau_count if args.tau_count is not None else 101
        upper = args.tau_max if args.tau_max is not None else 1.0
        if count < 2:
            raise ConfigError([("tau-count", "must be at least 2")])
        return np.linspace(0.0, upper, count)
    return None


def _cmd_svp(args) -> int:
    if not 0.0 < args.cutoff <= 1.0:
        raise ConfigError([("cutoff", "must be in (0, 1]")])
    entries = run_svp(args.results, args.grm, taus=_svp_taus(args), rule=args.rule,
                      alpha=args.alpha, cutoff=args.cutoff)
    print(f"wrote {len(entries)} corrected records to {args.results}/svp.jsonl")
    return 0


def _cmd_grm(args) -> int:
    dosages, names = load_genotypes(args.genotypes)
    grm = compute_grm(dosages)
    save_grm(grm, args.out)
    excluded = [names[i] for i in grm.excluded_markers]
    line = (f"computed relatedness for {grm.n} samples from {grm.n_markers} markers"
            f" to {args.out}")
    if excluded:
        line += f"; excluded {len(excluded)} monomorphic marker(s): {', '.join(excluded)}"
    print(line)
    return 0


def _cmd_simulate(args) -> int:
    config = load_simulate_config(args.config)
    sampler = null_sample if args.mode == "null" else ancestral_sample
    data = sampler(config.spec, config.n, config.seed)
    save_csv(data, config.output)
    print(f"wrote {data.n} rows to {config.output}")
    return 0


def _cmd_evaluate(args) -> int:
    config = load_eval_config(args.config)
    result = evaluate_grid(
        config.spec, config.estimands, config.estimators, config.n,
        config.replicates, thresholds=config.thresholds, alpha=config.alpha,
        seed=config.seed, sampler=config.sampler, learners=config.learners,
        folds=config.folds, workers=args.workers, truth_draws=config.truth_draws,
    )
    result.write(config.out_dir)
    print(f"wrote {len(result.metric_rows)} metric rows and "
          f"{len(result.coverage_rows)} coverage rows to {config.out_dir}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "estimate": _cmd_estimate,
        "svp": _cmd_svp,
        "grm": _cmd_grm,
        "simulate": _cmd_simulate,
        "evaluate": _cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return 3
    except (DataError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
