"""Single-signal spectral estimators: periodogram and tensor multitaper.

All estimators return values on the half domain of a
:class:`~specfactor.grid.FreqGrid`, shape ``(..., m)``, with the leading
axes matching any batch axes of the input signals.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .grid import FreqGrid

__all__ = [
    "TaperSet",
    "autocovariance_from_spectrum",
    "dpss",
    "multitaper",
    "periodogram",
    "taper_count",
]


def _check_signal(signal: np.ndarray, grid: FreqGrid) -> np.ndarray:
    signal = np.asarray(signal, dtype=float)
    if signal.ndim < grid.d or signal.shape[signal.ndim - grid.d:] != grid.shape:
        raise ValueError(f"signal shape {signal.shape} does not end in {grid.shape}")
    if not np.all(np.isfinite(signal)):
        raise ValueError("signal contains non-finite values")
    return signal


def periodogram(signal: np.ndarray, grid: FreqGrid) -> np.ndarray:
    """``|DFT(Y)[k]|**2 / N**d`` on the half domain.

    ``signal`` has shape ``(..., N, ..., N)``.
    """
    signal = _check_signal(signal, grid)
    axes = tuple(range(signal.ndim - grid.d, signal.ndim))
    coef = np.fft.fftn(signal, axes=axes)
    return grid.extract_half(np.abs(coef) ** 2) / grid.size


@dataclass(frozen=True)
class TaperSet:
    """``K`` orthonormal Slepian tapers of length ``n_side``.

    ``tapers`` has shape ``(K, N)``; ``concentrations`` holds the
    fraction of each taper's energy inside ``[-W, W]``.
    """

    n_side: int
    bandwidth: float
    tapers: np.ndarray
    concentrations: np.ndarray

    @property
    def order(self) -> int:
        return self.tapers.shape[0]


def taper_count(n_side: int, bandwidth: float) -> int:
    """``K = floor(2 N W)``."""
    # guard against 2*N*W landing a hair below an integer
    return int(np.floor(2 * n_side * bandwidth + 1e-12))


def _concentration(tapers: np.ndarray, bandwidth: float) -> np.ndarray:
    n = tapers.shape[1]
    lag = np.arange(n)[:, None] - np.arange(n)[None, :]
    # sinc kernel of the band [-W, W]
    band = 2 * bandwidth * np.sinc(2 * bandwidth * lag)
    return np.einsum("ki,ij,kj->k", tapers, band, tapers)


def dpss(n_side: int, bandwidth: float) -> TaperSet:
    """Discrete prolate spheroidal sequences via the tridiagonal commuting matrix.

    Returns the first ``K = floor(2 N W)`` sequences, sorted by
    decreasing concentration. Sign convention: even-order tapers have a
    positive sum, odd-order tapers a positive first moment about the
    centre.
    """
    n = int(n_side)
    if n < 2:
        raise ValueError("taper length must be at least 2")
    # the lower end is closed: W = 1/(2N) gives the single-taper estimator
    if not (2 * n * bandwidth >= 1 - 1e-12 and bandwidth < 0.5):
        raise ValueError(f"bandwidth must lie in [1/(2N), 1/2) = [{1 / (2 * n):.6g}, 0.5), got {bandwidth}")
    k = taper_count(n, bandwidth)
    if k < 1:
        raise ValueError("bandwidth yields zero tapers")

    t = np.arange(n)
    diag = ((n - 1 - 2 * t) / 2.0) ** 2 * np.cos(2 * np.pi * bandwidth)
    off = t[1:] * (n - t[1:]) / 2.0
    _, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(n - k, n - 1))
    tapers = vecs[:, ::-1].T.copy()
    tapers /= np.linalg.norm(tapers, axis=1, keepdims=True)

    centred = t - (n - 1) / 2.0
    for order in range(k):
        ref = tapers[order].sum() if order % 2 == 0 else centred @ tapers[order]
        if ref < 0:
            tapers[order] *= -1
    tapers.setflags(write=False)
    return TaperSet(n, float(bandwidth), tapers, _concentration(tapers, bandwidth))


def _tensor_tapers(tapers: TaperSet, d: int) -> np.ndarray:
    """All ``K**d`` tensor products, shape ``(K**d, N, ..., N)``."""
    out = []
    for idx in itertools.product(range(tapers.order), repeat=d):
        prod = tapers.tapers[idx[0]]
        for i in idx[1:]:
            prod = np.multiply.outer(prod, tapers.tapers[i])
        out.append(prod)
    return np.stack(out)


def multitaper(signal: np.ndarray, tapers: TaperSet, grid: FreqGrid, chunk: int = 64) -> np.ndarray:
    """Average of the ``K**d`` tensor-tapered periodograms.

    The tapers are unit-norm, so the tapered periodogram is
    ``|DFT(v * Y)|**2`` without the ``1/N**d`` factor; this keeps the
    estimate on the same scale as :func:`periodogram` (flat spectrum 1
    maps to 1).
    """
    signal = _check_signal(signal, grid)
    if tapers.n_side != grid.n_side:
        raise ValueError(f"taper length {tapers.n_side} does not match grid side {grid.n_side}")
    tensor = _tensor_tapers(tapers, grid.d)
    batch = signal.shape[: signal.ndim - grid.d]
    flat = signal.reshape((-1,) + grid.shape)
    axes = tuple(range(2, grid.d + 2))
    out = np.empty((flat.shape[0], grid.m))
    for start in range(0, flat.shape[0], chunk):
        block = flat[start:start + chunk, None] * tensor[None]
        power = np.abs(np.fft.fftn(block, axes=axes)) ** 2
        out[start:start + chunk] = grid.extract_half(power.mean(axis=1))
    return out.reshape(batch + (grid.m,))


def autocovariance_from_spectrum(values: np.ndarray, grid: FreqGrid) -> np.ndarray:
    """Inverse DFT of a half-domain spectrum.

    Returns the lag table ``R`` in ``fftn`` layout: ``R[j]`` sits at
    array position ``j mod N``. For a periodogram this is the circular
    autocovariance ``(1/N**d) sum_i Y[i] Y[i+j]``.
    """
    full = grid.expand_half(values)
    axes = tuple(range(full.ndim - grid.d, full.ndim))
    lags = np.fft.ifftn(full, axes=axes)
    return lags.real
