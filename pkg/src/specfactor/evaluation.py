"""Simulation experiments comparing per-signal spectrum estimators.

For every ``(N, n, seed)`` cell the harness simulates ``n`` signals from
a factor model and scores four estimators of the conditional spectra by
mean absolute error:

* ``ensemble_mean`` -- the ensemble mean ``mu_n`` assigned to every signal;
* ``multitaper`` -- per-signal multitaper at the wide bandwidth;
* ``projected_multitaper`` -- narrow-bandwidth multitaper projected onto
  the leading eigenvectors of ``Sigma_n``;
* ``oracle_projected_multitaper`` -- the same projection onto the
  leading eigenvectors of the population covariance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .factor import (
    DEFAULT_DENSE_THRESHOLD,
    EnsembleMoments,
    FactorSubspace,
    accumulate,
    baseline_mean_estimator,
    covariance_estimate,
    project_spectrum,
    select_rank,
    top_eigenpairs,
)
from .field import FactorModel, conditional_spectra, two_source_model, population_covariance, sample_factor_model
from .grid import build_grid
from .spectrum import dpss, multitaper, periodogram

__all__ = [
    "ESTIMATORS",
    "ExperimentConfig",
    "MaeReport",
    "MaeRow",
    "SweepResult",
    "convergence_sweep",
    "mae",
    "mae_with_stderr",
    "oracle_basis",
    "run_experiment",
]

logger = logging.getLogger(__name__)

ESTIMATORS = ("ensemble_mean", "multitaper", "projected_multitaper", "oracle_projected_multitaper")


def mae_with_stderr(estimates, truths) -> tuple[float, float]:
    """Mean absolute error and its standard error over signals."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truths, dtype=float))
    if est.shape != tru.shape:
        raise ValueError(f"estimates {est.shape} and truths {tru.shape} differ in shape")
    per_signal = np.abs(est - tru).mean(axis=1)
    n = len(per_signal)
    stderr = float(per_signal.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(per_signal.mean()), stderr


def mae(estimates, truths) -> float:
    """``(1/(n m)) sum_s sum_k |est_s[k] - truth_s[k]|``."""
    return mae_with_stderr(estimates, truths)[0]


@dataclass
class ExperimentConfig:
    model: FactorModel = field(default_factory=two_source_model)
    d: int = 2
    n_sides: tuple[int, ...] = (32,)
    counts: tuple[int, ...] = (64, 256, 1024)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    bandwidth_unprojected: float = 1 / 16
    bandwidth_projected: float = 1 / 64
    estimators: tuple[str, ...] = ESTIMATORS
    eigen_count: int = 16
    clip_negative: bool = True
    moments_from: str = "periodogram"
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD

    def __post_init__(self):
        self.n_sides = tuple(int(v) for v in self.n_sides)
        self.counts = tuple(int(v) for v in self.counts)
        self.seeds = tuple(int(v) for v in self.seeds)
        self.estimators = tuple(self.estimators)
        if not (self.n_sides and self.counts and self.seeds and self.estimators):
            raise ValueError("n_sides, counts, seeds and estimators must be nonempty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if self.moments_from not in ("periodogram", "multitaper"):
            raise ValueError("moments_from must be 'periodogram' or 'multitaper'")
        if min(self.counts) < 2:
            raise ValueError("every count must be at least 2")
        for n_side in self.n_sides:
            # raises on bandwidths outside the valid range
            dpss(n_side, self.bandwidth_unprojected)
            dpss(n_side, self.bandwidth_projected)


@dataclass(frozen=True)
class MaeRow:
    estimator: str
    n: int
    n_side: int
    seed: int
    mae: float
    stderr: float


@dataclass
class MaeReport:
    """Rows in cell order plus eigenvalue tables and selected subspaces per cell."""

    rows: list[MaeRow] = field(default_factory=list)
    eigenvalues: dict = field(default_factory=dict)
    subspaces: dict = field(default_factory=dict)

    def select(self, estimator: str, n: int, n_side: int) -> list[MaeRow]:
        return [r for r in self.rows if r.estimator == estimator and r.n == n and r.n_side == n_side]

    def seed_summary(self, estimator: str, n: int, n_side: int) -> tuple[float, float]:
        """Mean MAE over seeds and its standard error over seeds."""
        vals = np.array([r.mae for r in self.select(estimator, n, n_side)])
        if len(vals) == 0:
            raise KeyError((estimator, n, n_side))
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return float(vals.mean()), se

    def selected_rank(self, n: int, n_side: int, seed: int) -> int:
        return self.subspaces[(n, n_side, seed)].rank


def oracle_basis(model: FactorModel, grid, tol: float = 1e-10) -> np.ndarray:
    """Leading eigenvectors ``(r, m)`` of the population covariance.

    Only eigenvalues above ``tol`` times the largest are kept, so a
    degenerate model yields fewer than ``r`` vectors.
    """
    vals, vecs = np.linalg.eigh(population_covariance(model, grid))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    keep = int(np.sum(vals > tol * max(vals[0], np.finfo(float).tiny)))
    if keep == 0:
        raise ValueError("population covariance vanishes; no oracle subspace")
    return vecs[:, : min(keep, model.r)].T


def _run_cell(config: ExperimentConfig, grid, n: int, seed: int, tapers, oracle):
    stack = sample_factor_model(grid, config.model, n, seed)
    truth = conditional_spectra(config.model, stack.coeffs, grid)

    narrow = multitaper(stack.samples, tapers["projected"], grid)
    source = periodogram(stack.samples, grid) if config.moments_from == "periodogram" else narrow
    moments = accumulate(EnsembleMoments(grid, config.dense_threshold), source)
    eig_count = min(config.eigen_count, grid.m)
    vals, vecs = top_eigenpairs(covariance_estimate(moments), eig_count)
    subspace = select_rank(vals, moments.mean, vecs)

    estimates = {}
    if "ensemble_mean" in config.estimators:
        estimates["ensemble_mean"] = np.broadcast_to(baseline_mean_estimator(moments), truth.shape)
    if "multitaper" in config.estimators:
        estimates["multitaper"] = multitaper(stack.samples, tapers["unprojected"], grid)
    if "projected_multitaper" in config.estimators:
        estimates["projected_multitaper"] = project_spectrum(narrow, subspace, config.clip_negative)
    if "oracle_projected_multitaper" in config.estimators:
        estimates["oracle_projected_multitaper"] = project_spectrum(narrow, oracle, config.clip_negative)
    return estimates, truth, vals, subspace


def run_experiment(config: ExperimentConfig) -> MaeReport:
    """Score every estimator on every ``(N, n, seed)`` cell.

    Cells are visited in the order ``N``, then ``n``, then seed, and rows
    follow the estimator order of ``config.estimators``.
    """
    report = MaeReport()
    for n_side in config.n_sides:
        grid = build_grid(config.d, n_side)
        tapers = {
            "unprojected": dpss(n_side, config.bandwidth_unprojected),
            "projected": dpss(n_side, config.bandwidth_projected),
        }
        basis = oracle_basis(config.model, grid)
        oracle = FactorSubspace(len(basis), np.zeros(0), basis, 1.0, float("nan"))
        for n in config.counts:
            for seed in config.seeds:
                estimates, truth, vals, subspace = _run_cell(config, grid, n, seed, tapers, oracle)
                for name in config.estimators:
                    value, se = mae_with_stderr(estimates[name], truth)
                    report.rows.append(MaeRow(name, n, n_side, seed, value, se))
                report.eigenvalues[(n, n_side, seed)] = vals
                report.subspaces[(n, n_side, seed)] = subspace
                logger.info("cell N=%d n=%d seed=%d: rank %d, gap %.3g", n_side, n, seed,
                            subspace.rank, subspace.gap_ratio)
    return report


@dataclass
class SweepResult:
    """MAE against ``n``, averaged over seeds.

    ``table[(estimator, n_side)]`` is an array of rows
    ``(n, mean_mae, stderr_over_seeds)``. ``converging[n_side]`` records
    whether the projected-minus-oracle gap never grows with ``n`` by more
    than two standard errors.
    """

    report: MaeReport
    table: dict
    converging: dict


def convergence_sweep(config: ExperimentConfig) -> SweepResult:
    if len(config.counts) < 3:
        raise ValueError("a convergence sweep needs at least three values of n")
    config_counts = tuple(sorted(config.counts))
    report = run_experiment(config)
    table = {}
    for n_side in config.n_sides:
        for name in config.estimators:
            table[(name, n_side)] = np.array(
                [(n, *report.seed_summary(name, n, n_side)) for n in config_counts]
            )
    converging = {}
    pair = ("projected_multitaper", "oracle_projected_multitaper")
    if all(p in config.estimators for p in pair):
        for n_side in config.n_sides:
            gaps, errs = [], []
            for n in config_counts:
                proj = np.array([r.mae for r in report.select(pair[0], n, n_side)])
                orc = np.array([r.mae for r in report.select(pair[1], n, n_side)])
                diff = proj - orc
                gaps.append(diff.mean())
                errs.append(diff.std(ddof=1) / np.sqrt(len(diff)) if len(diff) > 1 else 0.0)
            converging[n_side] = all(
                gaps[i + 1] <= gaps[i] + 2 * np.hypot(errs[i], errs[i + 1]) for i in range(len(gaps) - 1)
            )
    return SweepResult(report, table, converging)
