"""Simulation of the factor model and its analytic ground truth.

Each signal is ``X_s = sum_l a_{s,l} Z_{s,l}`` where the sources ``Z_l``
are stationary Gaussian fields with known power spectra and the
coefficients ``a_{s,l}`` are drawn independently per signal.

Sources are synthesized in the Fourier domain (circulant embedding of
the torus), so the expected periodogram equals the prescribed spectrum
exactly at every grid frequency.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import FreqGrid

__all__ = [
    "AnalyticSpectrum",
    "CoefficientLaw",
    "FactorModel",
    "Kernel",
    "SignalStack",
    "conditional_spectrum",
    "conditional_spectra",
    "convolve_kernel",
    "two_source_model",
    "population_covariance",
    "sample_factor_model",
    "sample_white_noise",
    "signal_rng",
    "synthesize_field",
]

_SPECTRUM_KINDS = ("rect_lowpass", "rational", "constant", "tabulated")


@dataclass(frozen=True)
class AnalyticSpectrum:
    """A nonnegative, symmetric power spectrum on ``[-1/2, 1/2]^d``.

    Kinds
    -----
    ``rect_lowpass``
        ``amplitude * rect(cutoff_scale * |xi|)``; the rectangle is 1 on
        ``[-1/2, 1/2]`` (closed) and 0 outside.
    ``rational``
        ``1 / (1 + scale * |xi|)``.
    ``constant``
        ``value`` everywhere.
    ``tabulated``
        ``values`` given on the half domain of a grid with side
        ``n_side``; evaluation rounds ``xi * n_side`` to the nearest
        grid frequency.
    """

    kind: str
    amplitude: float = 1.0
    cutoff_scale: float = 1.0
    scale: float = 1.0
    value: float = 1.0
    values: np.ndarray | None = field(default=None, repr=False, compare=False)
    table_grid: FreqGrid | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _SPECTRUM_KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}; expected one of {_SPECTRUM_KINDS}")
        if self.kind == "rect_lowpass" and (self.amplitude < 0 or self.cutoff_scale <= 0):
            raise ValueError("rect_lowpass needs amplitude >= 0 and cutoff_scale > 0")
        if self.kind == "rational" and self.scale < 0:
            raise ValueError("rational spectrum needs scale >= 0")
        if self.kind == "constant" and self.value < 0:
            raise ValueError("constant spectrum must be nonnegative")
        if self.kind == "tabulated":
            if self.values is None or self.table_grid is None:
                raise ValueError("tabulated spectrum needs values and table_grid")
            vals = np.asarray(self.values, dtype=float)
            if vals.shape != (self.table_grid.m,):
                raise ValueError(f"tabulated values must have shape ({self.table_grid.m},)")
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ValueError("tabulated values must be finite and nonnegative")

    @classmethod
    def rect_lowpass(cls, amplitude: float, cutoff_scale: float) -> "AnalyticSpectrum":
        return cls("rect_lowpass", amplitude=float(amplitude), cutoff_scale=float(cutoff_scale))

    @classmethod
    def rational(cls, scale: float) -> "AnalyticSpectrum":
        return cls("rational", scale=float(scale))

    @classmethod
    def constant(cls, value: float = 1.0) -> "AnalyticSpectrum":
        return cls("constant", value=float(value))

    @classmethod
    def tabulated(cls, grid: FreqGrid, values) -> "AnalyticSpectrum":
        return cls("tabulated", values=np.asarray(values, dtype=float), table_grid=grid)

    def __call__(self, xi) -> np.ndarray:
        """Evaluate at frequencies ``xi`` of shape ``(..., d)``."""
        xi = np.asarray(xi, dtype=float)
        radius = np.linalg.norm(xi, axis=-1)
        if self.kind == "rect_lowpass":
            return np.where(self.cutoff_scale * radius <= 0.5, self.amplitude, 0.0)
        if self.kind == "rational":
            return 1.0 / (1.0 + self.scale * radius)
        if self.kind == "constant":
            return np.full(radius.shape, self.value)
        grid = self.table_grid
        k = np.rint(xi * grid.n_side).astype(int)
        flat = np.ravel_multi_index(tuple(np.moveaxis(k % grid.n_side, -1, 0)), grid.shape)
        return np.asarray(self.values, dtype=float)[grid.fft_to_half[flat]]

    def on_grid(self, grid: FreqGrid) -> np.ndarray:
        """Values ``P(k/N)`` on the half domain."""
        return self(grid.half_frequencies)

    def to_dict(self) -> dict:
        if self.kind == "rect_lowpass":
            return {"kind": self.kind, "amplitude": self.amplitude, "cutoff_scale": self.cutoff_scale}
        if self.kind == "rational":
            return {"kind": self.kind, "scale": self.scale}
        if self.kind == "constant":
            return {"kind": self.kind, "value": self.value}
        return {"kind": self.kind, "n_side": self.table_grid.n_side, "values": np.asarray(self.values).tolist()}


@dataclass(frozen=True)
class CoefficientLaw:
    """Distribution of each mixing coefficient ``a_l``.

    ``normal`` draws ``N(0, scale**2)`` independently per source and
    signal. ``fixed`` uses the deterministic ``values`` (one per source,
    or a single value broadcast to all sources).
    """

    kind: str = "normal"
    scale: float = 1.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("normal", "fixed"):
            raise ValueError(f"unknown coefficient law {self.kind!r}")
        if self.kind == "fixed" and not self.values:
            raise ValueError("fixed coefficient law needs values")

    def fixed_values(self, r: int) -> np.ndarray:
        vals = np.asarray(self.values, dtype=float)
        if vals.size == 1:
            return np.full(r, float(vals[0]))
        if vals.size != r:
            raise ValueError(f"fixed law has {vals.size} values for {r} sources")
        return vals

    def draw(self, rng: np.random.Generator, r: int) -> np.ndarray:
        if self.kind == "normal":
            return self.scale * rng.standard_normal(r)
        return self.fixed_values(r)

    def second_moment(self, r: int) -> np.ndarray:
        """``E[a_l**2]`` per source."""
        if self.kind == "normal":
            return np.full(r, self.scale ** 2)
        return self.fixed_values(r) ** 2

    def square_variance(self, r: int) -> np.ndarray:
        """``Var(a_l**2)`` per source; ``2 scale**4`` for the normal law."""
        if self.kind == "normal":
            # E a^4 = 3 s^4, (E a^2)^2 = s^4
            return np.full(r, 2.0 * self.scale ** 4)
        return np.zeros(r)

    def to_dict(self) -> dict:
        if self.kind == "normal":
            return {"kind": "normal", "scale": self.scale}
        return {"kind": "fixed", "values": list(self.values)}


@dataclass(frozen=True)
class FactorModel:
    """``r`` independent sources mixed with random coefficients."""

    sources: tuple[AnalyticSpectrum, ...]
    coeff_law: CoefficientLaw = CoefficientLaw()

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValueError("a factor model needs at least one source")

    @property
    def r(self) -> int:
        return len(self.sources)

    def source_spectra(self, grid: FreqGrid) -> np.ndarray:
        """Array ``(r, m)`` of source spectra on the half domain."""
        return np.stack([src.on_grid(grid) for src in self.sources])

    def mean_spectrum(self, grid: FreqGrid) -> np.ndarray:
        """``E[P_{X|a}] = sum_l E[a_l**2] P_{Z_l}`` on the half domain."""
        return self.coeff_law.second_moment(self.r) @ self.source_spectra(grid)


def two_source_model() -> FactorModel:
    """Two sources: ``2 rect(4|xi|)`` and ``1/(1 + 4|xi|)``, normal coefficients."""
    return FactorModel(
        (AnalyticSpectrum.rect_lowpass(2.0, 4.0), AnalyticSpectrum.rational(4.0)),
        CoefficientLaw("normal"),
    )


@dataclass
class SignalStack:
    """``count`` real fields of shape ``(N,)*d``.

    ``samples`` has shape ``(count, N, ..., N)`` in C order. ``coeffs``
    holds the realized mixing coefficients for simulated data.
    """

    d: int
    n_side: int
    samples: np.ndarray
    coeffs: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        expected = (self.n_side,) * self.d
        if self.samples.ndim != self.d + 1 or self.samples.shape[1:] != expected:
            raise ValueError(f"samples must have shape (count,)+{expected}, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if self.coeffs is not None:
            self.coeffs = np.asarray(self.coeffs, dtype=float)
            if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.count:
                raise ValueError("coeffs must have one row per signal")

    @property
    def count(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class Kernel:
    """Finitely supported convolution kernel ``psi`` on ``Z^d``."""

    offsets: np.ndarray
    taps: np.ndarray

    def __post_init__(self):
        offsets = np.atleast_2d(np.asarray(self.offsets, dtype=int))
        taps = np.asarray(self.taps, dtype=float).reshape(-1)
        if offsets.shape[0] != taps.shape[0]:
            raise ValueError("kernel needs one tap per offset")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "taps", taps)

    @property
    def d(self) -> int:
        return self.offsets.shape[1]


def signal_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for signal ``index`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_white_noise(grid: FreqGrid, count: int, seed: int) -> SignalStack:
    """I.i.d. standard normal fields."""
    if count < 1:
        raise ValueError("count must be at least 1")
    samples = np.empty((count,) + grid.shape)
    for s in range(count):
        samples[s] = signal_rng(seed, s).standard_normal(grid.shape)
    return SignalStack(grid.d, grid.n_side, samples)


def convolve_kernel(noise: SignalStack, kernel: Kernel) -> SignalStack:
    """Circular convolution ``Y[i] = sum_j W[j] psi[i - j]`` of every signal.

    The output is stationary on the torus with power spectrum
    ``|psi_hat(k/N)|**2``.
    """
    if kernel.d != noise.d:
        raise ValueError(f"kernel is {kernel.d}-dimensional, signals are {noise.d}-dimensional")
    span = kernel.offsets.max(axis=0) - kernel.offsets.min(axis=0)
    if np.any(span >= noise.n_side):
        raise ValueError("kernel support does not fit within the grid")
    shape = (noise.n_side,) * noise.d
    psi = np.zeros(shape)
    np.add.at(psi, tuple((kernel.offsets % noise.n_side).T), kernel.taps)
    axes = tuple(range(1, noise.d + 1))
    out = np.fft.ifftn(np.fft.fftn(noise.samples, axes=axes) * np.fft.fftn(psi), axes=axes).real
    return SignalStack(noise.d, noise.n_side, out, noise.coeffs)


def _amplitude(grid: FreqGrid, spectrum: AnalyticSpectrum) -> np.ndarray:
    values = spectrum.on_grid(grid)
    if np.any(values < 0):
        raise ValueError("spectrum is negative at some grid frequency")
    # expanded from the half domain so the filter is exactly Hermitian
    return np.sqrt(grid.expand_half(values))


def _filter_noise(noise: np.ndarray, amplitude: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(noise.ndim - d, noise.ndim))
    return np.fft.ifftn(np.fft.fftn(noise, axes=axes) * amplitude, axes=axes).real


def synthesize_field(grid: FreqGrid, spectrum: AnalyticSpectrum, count: int, seed: int) -> SignalStack:
    """Stationary Gaussian fields on the torus with power spectrum ``spectrum``.

    The DFT of real white noise has independent complex Gaussian
    coefficients of variance ``N**d`` (real, with the same total power,
    at self-negating frequencies); scaling them by ``sqrt(P(k/N))`` and
    inverting gives a field whose periodogram has mean ``P(k/N)``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    amplitude = _amplitude(grid, spectrum)
    samples = np.empty((count,) + grid.shape)
    for s in range(count):
        noise = signal_rng(seed, s).standard_normal(grid.shape)
        samples[s] = _filter_noise(noise, amplitude, grid.d)
    return SignalStack(grid.d, grid.n_side, samples)


def sample_factor_model(grid: FreqGrid, model: FactorModel, count: int, seed: int) -> SignalStack:
    """Draw ``count`` independent signals from ``model``.

    Signal ``s`` uses its own generator derived from ``(seed, s)``: first
    the ``r`` coefficients, then one white-noise field per source.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    amplitudes = np.stack([_amplitude(grid, src) for src in model.sources])
    samples = np.empty((count,) + grid.shape)
    coeffs = np.empty((count, model.r))
    for s in range(count):
        rng = signal_rng(seed, s)
        coeffs[s] = model.coeff_law.draw(rng, model.r)
        noise = rng.standard_normal((model.r,) + grid.shape)
        sources = _filter_noise(noise, amplitudes, grid.d)
        samples[s] = np.tensordot(coeffs[s], sources, axes=1)
    return SignalStack(grid.d, grid.n_side, samples, coeffs)


def conditional_spectra(model: FactorModel, coeffs, grid: FreqGrid) -> np.ndarray:
    """``sum_l a_l**2 P_{Z_l}(k/N)`` for coefficient rows of shape ``(..., r)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != model.r:
        raise ValueError(f"expected {model.r} coefficients, got {coeffs.shape[-1]}")
    return (coeffs ** 2) @ model.source_spectra(grid)


def conditional_spectrum(model: FactorModel, coeffs: Sequence[float], grid: FreqGrid) -> np.ndarray:
    """Conditional power spectrum of one signal on the half domain."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 1:
        raise ValueError("coeffs must be a vector")
    return conditional_spectra(model, coeffs, grid)


def population_covariance(model: FactorModel, grid: FreqGrid) -> np.ndarray:
    """``Cov[P_{X|a}]`` on the half domain: ``sum_l Var(a_l**2) p_l p_l^T``."""
    spectra = model.source_spectra(grid)
    weights = model.coeff_law.square_variance(model.r)
    return (spectra.T * weights) @ spectra
