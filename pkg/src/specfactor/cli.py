"""Command line interface: ``specfactor {simulate,estimate,analyze,eval}``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
format error, 4 numerical failure. Summaries go to stdout, diagnostics
to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import ConfigError, load_json, parse_experiment, parse_simulation
from .evaluation import run_experiment
from .factor import (
    DEFAULT_DENSE_THRESHOLD,
    EigenSolverError,
    EnsembleMoments,
    accumulate,
    covariance_estimate,
    merge,
    project_spectrum,
    select_rank,
    top_eigenpairs,
)
from .field import sample_factor_model
from .grid import build_grid
from .spectrum import dpss, multitaper, periodogram

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("specfactor")


class UsageError(Exception):
    pass


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def cmd_simulate(args) -> int:
    data = load_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = parse_simulation(data)
    grid = build_grid(cfg.d, cfg.n_side)
    stack = sample_factor_model(grid, cfg.model, cfg.count, cfg.seed)
    provenance = f"seed={cfg.seed}"
    formats.write_signals(args.output, stack, dtype=cfg.dtype, provenance=provenance)
    _emit({"command": "simulate", "n": cfg.count, "N": cfg.n_side, "d": cfg.d, "r": cfg.model.r,
           "seed": cfg.seed, "output": str(args.output)})
    return EXIT_OK


def cmd_estimate(args) -> int:
    stack = formats.read_signals(args.dataset)
    grid = build_grid(stack.d, stack.n_side)
    extra = {"method": args.method}
    if args.method == "periodogram":
        values = periodogram(stack.samples, grid)
    else:
        try:
            tapers = dpss(stack.n_side, args.bandwidth)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        values = multitaper(stack.samples, tapers, grid)
        extra.update(bandwidth=args.bandwidth, tapers=tapers.order)
    formats.write_spectra(args.output, grid, values, **extra)
    _emit({"command": "estimate", "count": stack.count, "N": stack.n_side, "d": stack.d,
           "output": str(args.output), **extra})
    return EXIT_OK


def _shard_moments(grid, spectra: np.ndarray, shards: int, dense_threshold: int) -> EnsembleMoments:
    parts = [accumulate(EnsembleMoments(grid, dense_threshold), chunk)
             for chunk in np.array_split(spectra, max(1, shards)) if len(chunk)]
    total = parts[0]
    for part in parts[1:]:
        total = merge(total, part)
    return total


def cmd_analyze(args) -> int:
    header, grid, spectra = formats.read_spectra(args.spectra)
    if spectra.shape[0] < 2:
        raise UsageError(f"analysis needs at least 2 spectra, got {spectra.shape[0]}")
    target, target_header = spectra, header
    if args.project is not None:
        target_header, pgrid, target = formats.read_spectra(args.project)
        if (pgrid.d, pgrid.n_side) != (grid.d, grid.n_side):
            raise UsageError("projection stack was computed on a different grid")

    moments = _shard_moments(grid, spectra, args.shards, args.dense_threshold)
    how_many = min(args.eigen_count, grid.m)
    if args.rank is not None and not 1 <= args.rank <= how_many:
        raise UsageError(f"rank override {args.rank} exceeds the {how_many} available eigenpairs")
    vals, vecs = top_eigenpairs(covariance_estimate(moments), how_many)
    subspace = select_rank(vals, moments.mean, vecs, rank=args.rank)
    projected = project_spectrum(target, subspace, clip_negative=args.clip_negative)

    prefix = str(args.output)
    outputs = {
        "eigenvalues": prefix + "_eigenvalues.csv",
        "basis": prefix + "_basis.fase",
        "projected": prefix + "_projected.fase",
        "summary": prefix + "_summary.json",
    }
    formats.write_eigenvalues_csv(outputs["eigenvalues"], vals)
    formats.write_spectra(outputs["basis"], grid, subspace.basis, kind="basis")
    formats.write_spectra(outputs["projected"], grid, projected, method="projected",
                          source_method=target_header.get("method", "unknown"), rank=subspace.rank)
    ratios = [None if not np.isfinite(r) else float(r) for r in subspace.ratios]
    summary = {
        "command": "analyze",
        "count": int(moments.count),
        "rank": subspace.rank,
        "rank_overridden": args.rank is not None,
        "eigenvalue_ratios": ratios,
        "gap_ratio": subspace.gap_ratio,
        "low_confidence": subspace.low_confidence,
        "mean_energy_ratio": subspace.mean_energy_ratio,
        "warnings": subspace.warnings,
        "outputs": outputs,
    }
    Path(outputs["summary"]).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _emit(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    data = load_json(args.config)
    if args.seed is not None:
        data["seeds"] = [args.seed]
    config = parse_experiment(data)
    report = run_experiment(config)
    out = Path(args.output)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["estimator", "n", "N", "seed", "mae", "stderr"])
        for row in report.rows:
            writer.writerow([row.estimator, row.n, row.n_side, row.seed, repr(row.mae), repr(row.stderr)])
    eig_files = []
    for n_side in config.n_sides:
        for n in config.counts:
            path = out.with_name(f"{out.stem}_eigenvalues_n{n}_N{n_side}.csv")
            formats.write_eigenvalues_csv(path, {s: report.eigenvalues[(n, n_side, s)] for s in config.seeds})
            eig_files.append(str(path))
    _emit({"command": "eval", "rows": len(report.rows), "output": str(out), "eigenvalue_files": eig_files})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specfactor", description="Factor-analysis power spectrum estimation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a signal stack from a factor model")
    p.add_argument("--config", required=True, help="JSON simulation config")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="per-signal spectrum estimates")
    p.add_argument("dataset")
    p.add_argument("--method", choices=("periodogram", "multitaper"), default="periodogram")
    p.add_argument("--bandwidth", type=float, default=1 / 16, help="multitaper resolution W")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("analyze", help="covariance, eigenvalues, rank and projection")
    p.add_argument("spectra", help="spectra stack used for the moments (periodograms)")
    p.add_argument("--project", help="spectra stack to project (defaults to the moments stack)")
    p.add_argument("--rank", type=int, help="override the selected rank")
    p.add_argument("--eigen-count", type=int, default=16)
    p.add_argument("--clip-negative", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--dense-threshold", type=int, default=DEFAULT_DENSE_THRESHOLD)
    p.add_argument("--shards", type=int, default=1, help="accumulate in this many shards and merge")
    p.add_argument("--output", required=True, help="prefix for the output files")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="MAE experiment over (N, n, seed)")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--output", required=True, help="MAE report CSV")
    p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"specfactor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EigenSolverError as exc:
        print(f"specfactor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, formats.FormatError) as exc:
        print(f"specfactor: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"specfactor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
