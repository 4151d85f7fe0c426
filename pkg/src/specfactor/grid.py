"""Sampling and frequency domains on the cube M_N^d.

Frequencies are integer vectors ``k`` with coordinates in
``M_N = {-ceil(N/2)+1, ..., floor(N/2)}``. Because the fields are real,
spectra are stored only on a canonical half domain; every other
frequency is recovered by symmetry ``P[k] = P[-k mod N]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = ["FreqGrid", "build_grid", "delta", "delta_diagonal", "side_range"]


def side_range(n_side: int) -> np.ndarray:
    """Return the ordered integer set M_N."""
    return np.arange(-((n_side + 1) // 2) + 1, n_side // 2 + 1)


def _canonical(k: np.ndarray, n_side: int) -> np.ndarray:
    # map integers mod N back into M_N
    lo = -((n_side + 1) // 2) + 1
    return (np.asarray(k) - lo) % n_side + lo


def _self_negating(k: np.ndarray, n_side: int) -> np.ndarray:
    return np.all((2 * np.asarray(k)) % n_side == 0, axis=-1)


def _in_half(k: np.ndarray, n_side: int) -> np.ndarray:
    """Lexicographic positivity over the coordinates that are not self-negating.

    A coordinate equal to 0 or N/2 is its own negative modulo N, so it
    cannot decide between ``k`` and ``-k``; the first coordinate that
    can decide must be positive. Fully self-negating vectors are kept.
    """
    k = _canonical(k, n_side)
    fixed = (2 * k) % n_side == 0
    out = np.ones(k.shape[:-1], dtype=bool)
    decided = np.zeros(k.shape[:-1], dtype=bool)
    for axis in range(k.shape[-1]):
        here = ~decided & ~fixed[..., axis]
        out[here] = k[..., axis][here] > 0
        decided |= here
    return out


@dataclass(frozen=True, eq=False)
class FreqGrid:
    """Frequency grid for ``d``-dimensional fields of side ``n_side``.

    Attributes
    ----------
    d, n_side : int
        Dimension and side length N.
    full_points : ndarray, shape (N**d, d)
        All of M_N^d in lexicographic order.
    half_points : ndarray, shape (m, d)
        The canonical half domain M_{N,+}^d, in the order inherited from
        ``full_points``. This order is the on-disk order of spectra.
    half_fft_index : ndarray, shape (m,)
        Flat index of each half point in an ``np.fft.fftn`` output.
    fft_to_half : ndarray, shape (N**d,)
        For each flat FFT position, the half-domain index of ``k`` or ``-k``.
    fft_conjugated : ndarray of bool, shape (N**d,)
        True where the match in ``fft_to_half`` went through ``-k``.
    """

    d: int
    n_side: int
    full_points: np.ndarray = field(repr=False)
    half_points: np.ndarray = field(repr=False)
    half_fft_index: np.ndarray = field(repr=False)
    fft_to_half: np.ndarray = field(repr=False)
    fft_conjugated: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_side,) * self.d

    @property
    def size(self) -> int:
        return self.n_side ** self.d

    @property
    def m(self) -> int:
        """Number of half-domain frequencies."""
        return len(self.half_points)

    @property
    def half_frequencies(self) -> np.ndarray:
        """Continuous frequencies ``k / N`` of the half points."""
        return self.half_points / self.n_side

    @property
    def self_negating(self) -> np.ndarray:
        """Boolean mask over half points with ``k = -k mod N``."""
        return _self_negating(self.half_points, self.n_side)

    def fft_frequencies(self) -> np.ndarray:
        """Integer frequencies in M_N^d laid out like an ``fftn`` output.

        Returns an array of shape ``(N,)*d + (d,)``.
        """
        axis = _canonical(np.arange(self.n_side), self.n_side)
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def half_index(self, k) -> tuple[int, bool]:
        """Locate ``k`` (any integer vector) in the half domain.

        Returns the index into ``half_points`` and whether ``-k`` rather
        than ``k`` was matched.
        """
        k = np.asarray(k, dtype=int).reshape(-1)
        if k.shape != (self.d,):
            raise ValueError(f"expected a frequency with {self.d} coordinates, got {k.shape}")
        flat = int(np.ravel_multi_index(tuple(k % self.n_side), self.shape))
        return int(self.fft_to_half[flat]), bool(self.fft_conjugated[flat])

    def contains_half(self, k) -> bool:
        k = np.asarray(k, dtype=int)
        if k.shape != (self.d,) or np.any(_canonical(k, self.n_side) != k):
            return False
        return bool(_in_half(k, self.n_side))

    def extract_half(self, full: np.ndarray) -> np.ndarray:
        """Restrict arrays in ``fftn`` layout to the half domain.

        ``full`` has shape ``(..., N, ..., N)``; the result ``(..., m)``.
        """
        full = np.asarray(full)
        flat = full.reshape(full.shape[: full.ndim - self.d] + (self.size,))
        return flat[..., self.half_fft_index]

    def expand_half(self, values: np.ndarray) -> np.ndarray:
        """Rebuild the symmetric full spectrum in ``fftn`` layout."""
        values = np.asarray(values)
        if values.shape[-1] != self.m:
            raise ValueError(f"expected {self.m} half-domain values, got {values.shape[-1]}")
        full = values[..., self.fft_to_half]
        return full.reshape(values.shape[:-1] + self.shape)


def build_grid(d: int, n_side: int) -> FreqGrid:
    """Construct the grid for dimension ``d`` and side length ``n_side``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if int(n_side) != n_side or n_side < 2:
        raise ValueError(f"side length must be an integer >= 2, got {n_side!r}")
    d, n_side = int(d), int(n_side)

    axis = side_range(n_side)
    full = np.array(list(itertools.product(axis, repeat=d)), dtype=int).reshape(-1, d)
    half = full[_in_half(full, n_side)]

    shape = (n_side,) * d
    half_fft = np.ravel_multi_index(tuple((half % n_side).T), shape)

    fft_to_half = np.full(n_side ** d, -1, dtype=np.intp)
    conjugated = np.zeros(n_side ** d, dtype=bool)
    fft_to_half[half_fft] = np.arange(len(half))
    neg_fft = np.ravel_multi_index(tuple(((-half) % n_side).T), shape)
    unset = fft_to_half[neg_fft] < 0
    fft_to_half[neg_fft[unset]] = np.flatnonzero(unset)
    conjugated[neg_fft[unset]] = True
    assert np.all(fft_to_half >= 0)

    for arr in (full, half, half_fft, fft_to_half, conjugated):
        arr.setflags(write=False)
    return FreqGrid(d, n_side, full, half, half_fft, fft_to_half, conjugated)


def delta(grid: FreqGrid, k1, k2) -> int:
    """Diagonal weight of the periodogram covariance.

    2 when ``k1 == k2`` is self-negating (every coordinate a multiple
    of N/2), 1 on the remaining diagonal, 0 off the diagonal.
    """
    k1 = np.asarray(k1, dtype=int)
    k2 = np.asarray(k2, dtype=int)
    for k in (k1, k2):
        if not grid.contains_half(k):
            raise ValueError(f"frequency {k.tolist()} is not in the half domain")
    if not np.array_equal(k1, k2):
        return 0
    return 2 if _self_negating(k1, grid.n_side) else 1


def delta_diagonal(grid: FreqGrid) -> np.ndarray:
    """``delta(k, k)`` for every half point, as an integer array."""
    return np.where(grid.self_negating, 2, 1)
