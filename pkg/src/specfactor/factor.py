"""Factor analysis of an ensemble of power spectrum estimates.

The pipeline is: accumulate per-signal periodograms into
:class:`EnsembleMoments`, form the corrected covariance estimate
``Sigma_n = C_n / (1 + delta) - mu_n mu_n^T``, extract its leading
eigenvectors, choose the rank at the knee of the eigenvalues and project
individual (multitaper) estimates onto the resulting span.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .grid import FreqGrid, delta_diagonal

__all__ = [
    "CovarianceEstimate",
    "EigenSolverError",
    "EnsembleMoments",
    "FactorSubspace",
    "accumulate",
    "baseline_mean_estimator",
    "covariance_estimate",
    "merge",
    "project_spectrum",
    "select_rank",
    "top_eigenpairs",
]

logger = logging.getLogger(__name__)

DEFAULT_DENSE_THRESHOLD = 4096
KNEE_RATIO = 2.0
ENERGY_WARNING = 0.95


class EigenSolverError(RuntimeError):
    """Orthogonal iteration failed to converge."""

    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(f"{message}; residual norms {np.array2string(residuals, precision=3)}")
        self.residuals = residuals


def _neumaier_add(total: np.ndarray, comp: np.ndarray, x: np.ndarray) -> None:
    """In-place compensated ``total += x``; the running error lands in ``comp``."""
    t = total + x
    big = np.abs(total) >= np.abs(x)
    comp += np.where(big, (total - t) + x, (x - t) + total)
    total[...] = t


@dataclass
class EnsembleMoments:
    """Running first and second moments of half-domain spectra.

    For ``m <= dense_threshold`` the second moment is kept as a dense
    ``m x m`` compensated sum. Above the threshold the individual
    spectra are retained instead, so ``Sigma_n`` can be applied
    implicitly.
    """

    grid: FreqGrid
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD
    count: int = 0
    sum_p: np.ndarray = field(default=None, repr=False)
    sum_p_err: np.ndarray = field(default=None, repr=False)
    sum_pp: np.ndarray | None = field(default=None, repr=False)
    sum_pp_err: np.ndarray | None = field(default=None, repr=False)
    rows: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        m = self.grid.m
        if self.sum_p is None:
            self.sum_p = np.zeros(m)
            self.sum_p_err = np.zeros(m)
        if self.dense and self.sum_pp is None:
            self.sum_pp = np.zeros((m, m))
            self.sum_pp_err = np.zeros((m, m))

    @property
    def dense(self) -> bool:
        return self.grid.m <= self.dense_threshold

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def mean(self) -> np.ndarray:
        """``mu_n``."""
        if self.count == 0:
            raise ValueError("no spectra accumulated")
        return (self.sum_p + self.sum_p_err) / self.count

    @property
    def second_moment(self) -> np.ndarray:
        """Dense ``C_n`` (built from the retained rows in implicit mode)."""
        if self.count == 0:
            raise ValueError("no spectra accumulated")
        if self.dense:
            return (self.sum_pp + self.sum_pp_err) / self.count
        data = self.data
        return data.T @ data / self.count

    @property
    def data(self) -> np.ndarray:
        """Retained spectra, shape ``(count, m)`` (implicit mode only)."""
        if self.dense:
            raise ValueError("dense moments do not retain individual spectra")
        if not self.rows:
            return np.zeros((0, self.m))
        return np.concatenate(self.rows, axis=0)

    def copy(self) -> "EnsembleMoments":
        return EnsembleMoments(
            self.grid,
            self.dense_threshold,
            self.count,
            self.sum_p.copy(),
            self.sum_p_err.copy(),
            None if self.sum_pp is None else self.sum_pp.copy(),
            None if self.sum_pp_err is None else self.sum_pp_err.copy(),
            list(self.rows),
        )


def accumulate(moments: EnsembleMoments, spectra: np.ndarray, grid: FreqGrid | None = None) -> EnsembleMoments:
    """Add one spectrum ``(m,)`` or a batch ``(n, m)``; returns a new object.

    Passing ``grid`` checks that the spectra were computed on the same
    grid as the moments.
    """
    if grid is not None and (grid.d, grid.n_side) != (moments.grid.d, moments.grid.n_side):
        raise ValueError("spectrum grid does not match the moments grid")
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    if spectra.ndim != 2 or spectra.shape[1] != moments.m:
        raise ValueError(f"expected spectra with {moments.m} half-domain values, got shape {spectra.shape}")
    if not np.all(np.isfinite(spectra)):
        raise ValueError("spectra must be finite")
    out = moments.copy()
    out.count += spectra.shape[0]
    _neumaier_add(out.sum_p, out.sum_p_err, spectra.sum(axis=0))
    if out.dense:
        _neumaier_add(out.sum_pp, out.sum_pp_err, spectra.T @ spectra)
    else:
        out.rows.append(spectra.copy())
    return out


def merge(a: EnsembleMoments, b: EnsembleMoments) -> EnsembleMoments:
    """Combine moments accumulated on disjoint shards."""
    if (a.grid.d, a.grid.n_side) != (b.grid.d, b.grid.n_side):
        raise ValueError("cannot merge moments from different grids")
    if a.dense != b.dense:
        raise ValueError("cannot merge dense and implicit moments")
    out = a.copy()
    out.count += b.count
    _neumaier_add(out.sum_p, out.sum_p_err, b.sum_p)
    out.sum_p_err += b.sum_p_err
    if out.dense:
        _neumaier_add(out.sum_pp, out.sum_pp_err, b.sum_pp)
        out.sum_pp_err += b.sum_pp_err
    else:
        out.rows.extend(b.rows)
    return out


@dataclass
class CovarianceEstimate:
    """``Sigma_n`` in dense or implicit (low rank plus diagonal) form.

    The implicit form applies
    ``Sigma_n x = D^T (D x) / n - mu (mu . x) + diag_correction * x``
    where ``D`` holds the retained spectra and ``diag_correction``
    rescales the diagonal of ``C_n`` by ``1/2`` or ``1/3``.
    """

    m: int
    dense: np.ndarray | None = None
    data: np.ndarray | None = field(default=None, repr=False)
    mean: np.ndarray | None = field(default=None, repr=False)
    diag_correction: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    def matmat(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_dense:
            return self.dense @ x
        n = self.data.shape[0]
        vec = x.ndim == 1
        x2 = x[:, None] if vec else x
        out = self.data.T @ (self.data @ x2) / n
        out -= np.outer(self.mean, self.mean @ x2)
        out += self.diag_correction[:, None] * x2
        return out[:, 0] if vec else out

    def to_dense(self) -> np.ndarray:
        if self.is_dense:
            return self.dense
        return self.matmat(np.eye(self.m))


def covariance_estimate(moments: EnsembleMoments) -> CovarianceEstimate:
    """Bias-corrected covariance of the conditional spectra.

    ``Sigma_n[k1, k2] = C_n[k1, k2] / (1 + delta[k1, k2]) - mu_n[k1] mu_n[k2]``.
    Since ``delta`` vanishes off the diagonal, only diagonal entries of
    ``C_n`` are rescaled.
    """
    if moments.count < 2:
        raise ValueError(f"covariance estimate needs at least 2 spectra, got {moments.count}")
    mu = moments.mean
    weight = 1.0 / (1.0 + delta_diagonal(moments.grid))
    if moments.dense:
        sigma = moments.second_moment
        diag = np.diag(sigma) * weight
        sigma = sigma - np.outer(mu, mu)
        sigma = 0.5 * (sigma + sigma.T)
        sigma[np.diag_indices_from(sigma)] = diag - mu * mu
        return CovarianceEstimate(moments.m, dense=sigma)
    data = moments.data
    c_diag = np.einsum("sk,sk->k", data, data) / moments.count
    return CovarianceEstimate(moments.m, data=data, mean=mu, diag_correction=(weight - 1.0) * c_diag)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def top_eigenpairs(cov: CovarianceEstimate, how_many: int = 16, tol: float = 1e-10, max_iter: int | None = None):
    """Largest ``how_many`` eigenvalues (descending) and eigenvectors ``(m, L)``.

    Dense estimates use a full symmetric eigendecomposition; implicit
    ones use Lanczos iteration on the matrix-free operator. Each
    eigenvector's largest-magnitude entry is made positive.

    Raises
    ------
    EigenSolverError
        If the iterative solver does not converge within ``max_iter``
        restarts; the residual norms of the partial result are attached.
    """
    if not 1 <= how_many <= cov.m:
        raise ValueError(f"requested {how_many} eigenpairs but m = {cov.m}")
    if cov.is_dense or how_many >= cov.m - 1:
        vals, vecs = np.linalg.eigh(cov.to_dense())
        return vals[::-1][:how_many], _fix_signs(vecs[:, ::-1][:, :how_many])
    op = LinearOperator((cov.m, cov.m), matvec=cov.matmat, matmat=cov.matmat, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(cov.m)
    try:
        vals, vecs = eigsh(op, k=how_many, which="LA", tol=tol, maxiter=max_iter, v0=v0)
    except ArpackNoConvergence as exc:
        vecs = exc.eigenvectors
        residuals = np.linalg.norm(cov.matmat(vecs) - vecs * exc.eigenvalues, axis=0)
        raise EigenSolverError(f"Lanczos iteration did not converge ({exc})", residuals) from None
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    residuals = np.linalg.norm(cov.matmat(vecs) - vecs * vals, axis=0)
    scale = max(np.abs(vals).max(), np.finfo(float).tiny)
    if np.any(residuals > 1e-6 * scale):
        raise EigenSolverError("eigenpair residuals too large", residuals)
    logger.debug("Lanczos residuals up to %.3g", residuals.max())
    return vals, _fix_signs(vecs)


@dataclass
class FactorSubspace:
    """Selected factor span.

    ``basis`` has shape ``(rank, m)`` with orthonormal rows.
    """

    rank: int
    eigenvalues: np.ndarray
    basis: np.ndarray
    mean_energy_ratio: float
    gap_ratio: float
    low_confidence: bool = False
    warnings: list = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        """Consecutive ratios ``lambda_l / lambda_{l+1}`` (nan where undefined)."""
        lam = np.asarray(self.eigenvalues, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(lam[1:] > 0, lam[:-1] / lam[1:], np.nan)


def _knee(eigenvalues: np.ndarray) -> tuple[int, float]:
    lam = eigenvalues
    best, best_ratio = 1, -np.inf
    for l in range(1, len(lam)):
        if lam[l] > 0:
            ratio = lam[l - 1] / lam[l]
            if ratio > best_ratio:
                best, best_ratio = l, ratio
    return best, best_ratio


def select_rank(eigenvalues, mean, basis_candidates, rank: int | None = None) -> FactorSubspace:
    """Choose the rank at the largest consecutive eigenvalue ratio.

    ``basis_candidates`` is ``(m, L)`` as returned by
    :func:`top_eigenpairs`. If the largest ratio is below 2 the rank
    falls back to 1 and the result is flagged low-confidence. ``rank``
    overrides the automatic choice. A warning is recorded when the
    projection of ``mean`` onto the span keeps less than 95% of its
    energy.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or len(lam) < 3:
        raise ValueError("rank selection needs at least 3 eigenvalues")
    if np.any(np.diff(lam) > 1e-12 * max(1.0, np.abs(lam).max())):
        raise ValueError("eigenvalues must be nonincreasing")
    cands = np.asarray(basis_candidates, dtype=float)
    if cands.ndim != 2 or cands.shape[1] != len(lam):
        raise ValueError("basis_candidates must have one column per eigenvalue")

    knee, gap = _knee(lam)
    warnings = []
    low_confidence = not gap >= KNEE_RATIO
    if rank is None:
        rank = 1 if low_confidence else knee
        if low_confidence:
            warnings.append(f"no eigenvalue gap above {KNEE_RATIO:g} (largest ratio {gap:.3g}); using rank 1")
    else:
        if not 1 <= rank <= len(lam):
            raise ValueError(f"rank override {rank} outside 1..{len(lam)}")
        low_confidence = False

    basis = cands[:, :rank].T.copy()
    mu = np.asarray(mean, dtype=float)
    norm2 = float(mu @ mu)
    energy = float(np.sum((basis @ mu) ** 2) / norm2) if norm2 > 0 else 1.0
    if energy < ENERGY_WARNING:
        warnings.append(f"projection keeps only {energy:.3f} of the mean spectrum energy")
    for w in warnings:
        logger.warning(w)
    return FactorSubspace(rank, lam, basis, energy, float(gap), low_confidence, warnings)


def project_spectrum(estimate: np.ndarray, subspace: FactorSubspace, clip_negative: bool = True) -> np.ndarray:
    """Orthogonal projection of estimates ``(..., m)`` onto the factor span.

    Negative projected values are set to zero unless ``clip_negative``
    is false.
    """
    basis = np.asarray(subspace.basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] == 0:
        raise ValueError("cannot project onto an empty subspace")
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape[-1] != basis.shape[1]:
        raise ValueError(f"estimate has {estimate.shape[-1]} values, subspace lives in {basis.shape[1]}")
    out = (estimate @ basis.T) @ basis
    if clip_negative:
        out = np.maximum(out, 0.0)
    return out


def baseline_mean_estimator(moments: EnsembleMoments) -> np.ndarray:
    """The ensemble mean ``mu_n``, assigned to every signal."""
    if moments.count < 1:
        raise ValueError("no spectra accumulated")
    return moments.mean
