"""On-disk formats.

Every binary file is::

    FASE1\\n
    <one line of JSON header, keys sorted>\\n
    <little-endian float payload, C order>

The header always carries ``kind``, ``d``, ``n_side``, ``count`` and
``dtype`` (``"<f4"`` or ``"<f8"``). Signal stacks (``kind="signals"``)
hold ``count`` fields of ``N**d`` values, optionally followed by a
``count x r`` coefficient block (``coeffs_r`` > 0). Spectra stacks
(``kind="spectra"``) and bases (``kind="basis"``) hold ``count`` rows of
``m`` half-domain values in the grid's canonical order; tapers
(``kind="tapers"``) hold ``count`` rows of ``N`` values.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .field import SignalStack
from .grid import FreqGrid, build_grid
from .spectrum import TaperSet, dpss

MAGIC = b"FASE1"
DTYPES = ("<f4", "<f8")

__all__ = [
    "FormatError",
    "cached_dpss",
    "read_container",
    "read_signals",
    "read_spectra",
    "read_tapers",
    "write_container",
    "write_eigenvalues_csv",
    "write_signals",
    "write_spectra",
    "write_tapers",
]


class FormatError(ValueError):
    """Corrupt or inconsistent file."""


def _row_width(header: dict) -> int:
    kind = header["kind"]
    if kind == "signals":
        return header["n_side"] ** header["d"]
    if kind in ("spectra", "basis"):
        return build_grid(header["d"], header["n_side"]).m
    if kind == "tapers":
        return header["n_side"]
    raise FormatError(f"unknown payload kind {kind!r}")


def write_container(path, header: dict, blocks) -> None:
    header = dict(header)
    if header.get("dtype", "<f8") not in DTYPES:
        raise ValueError(f"dtype must be one of {DTYPES}")
    header.setdefault("dtype", "<f8")
    dtype = np.dtype(header["dtype"])
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n" + text.encode("ascii") + b"\n")
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype=dtype).tobytes())


def read_container(path) -> tuple[dict, np.ndarray, np.ndarray | None]:
    """Return ``(header, rows, coeffs)``; ``rows`` is ``(count, width)``."""
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    if first < 0 or raw[:first] != MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MAGIC.decode()}")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[first + 1:second].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    for key in ("kind", "d", "n_side", "count", "dtype"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    if header["dtype"] not in DTYPES:
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    dtype = np.dtype(header["dtype"])
    width = _row_width(header)
    count = int(header["count"])
    r = int(header.get("coeffs_r", 0))
    payload = raw[second + 1:]
    expected = (count * width + count * r) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype=dtype).astype(float)
    rows = values[: count * width].reshape(count, width)
    coeffs = values[count * width:].reshape(count, r) if r else None
    return header, rows, coeffs


def write_signals(path, stack: SignalStack, dtype: str = "<f8", provenance: str = "") -> None:
    r = 0 if stack.coeffs is None else stack.coeffs.shape[1]
    header = {
        "kind": "signals", "d": stack.d, "n_side": stack.n_side, "count": stack.count,
        "dtype": dtype, "coeffs_r": r, "provenance": provenance,
    }
    blocks = [stack.samples.reshape(stack.count, -1)]
    if r:
        blocks.append(stack.coeffs)
    write_container(path, header, blocks)


def read_signals(path) -> SignalStack:
    header, rows, coeffs = read_container(path)
    if header["kind"] != "signals":
        raise FormatError(f"{path}: expected a signal stack, found {header['kind']!r}")
    d, n_side = header["d"], header["n_side"]
    return SignalStack(d, n_side, rows.reshape((header["count"],) + (n_side,) * d), coeffs)


def write_spectra(path, grid: FreqGrid, values: np.ndarray, kind: str = "spectra",
                  dtype: str = "<f8", **extra) -> None:
    values = np.atleast_2d(values)
    if values.shape[1] != grid.m:
        raise ValueError(f"expected rows of {grid.m} values")
    header = {"kind": kind, "d": grid.d, "n_side": grid.n_side, "count": values.shape[0], "dtype": dtype}
    header.update(extra)
    write_container(path, header, [values])


def read_spectra(path, kind: str = "spectra") -> tuple[dict, FreqGrid, np.ndarray]:
    header, rows, _ = read_container(path)
    if header["kind"] != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, found {header['kind']!r}")
    return header, build_grid(header["d"], header["n_side"]), rows


def write_tapers(path, tapers: TaperSet) -> None:
    header = {"kind": "tapers", "d": 1, "n_side": tapers.n_side, "count": tapers.order,
              "dtype": "<f8", "bandwidth": tapers.bandwidth,
              "concentrations": [float(c) for c in tapers.concentrations]}
    write_container(path, header, [tapers.tapers])


def read_tapers(path) -> TaperSet:
    header, rows, _ = read_container(path)
    if header["kind"] != "tapers":
        raise FormatError(f"{path}: expected tapers, found {header['kind']!r}")
    return TaperSet(header["n_side"], header["bandwidth"], rows, np.asarray(header["concentrations"]))


def cached_dpss(cache_dir, n_side: int, bandwidth: float) -> TaperSet:
    """:func:`~specfactor.spectrum.dpss`, cached on disk under ``cache_dir``."""
    path = Path(cache_dir) / f"dpss_N{n_side}_W{bandwidth!r}.fase"
    if path.exists():
        return read_tapers(path)
    tapers = dpss(n_side, bandwidth)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tapers(path, tapers)
    return tapers


def write_eigenvalues_csv(path, eigenvalues) -> None:
    """Write ``index,eigenvalue`` rows (1-based index).

    ``eigenvalues`` may also be a mapping ``seed -> values``, giving
    ``seed,index,eigenvalue`` rows in the mapping's order.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(eigenvalues, dict):
            writer.writerow(["seed", "index", "eigenvalue"])
            for seed, vals in eigenvalues.items():
                for i, val in enumerate(vals, start=1):
                    writer.writerow([seed, i, repr(float(val))])
            return
        writer.writerow(["index", "eigenvalue"])
        for i, val in enumerate(eigenvalues, start=1):
            writer.writerow([i, repr(float(val))])
