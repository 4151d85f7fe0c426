"""JSON configuration files for the command line tools.

Unknown keys are errors. A simulation config looks like::

    {"d": 2, "n_side": 32, "count": 1024, "seed": 0,
     "sources": [{"kind": "rect_lowpass", "amplitude": 2, "cutoff_scale": 4},
                 {"kind": "rational", "scale": 4}],
     "coefficients": {"kind": "normal", "scale": 1}}

An experiment config replaces ``n_side``/``count``/``seed`` with the
lists ``n_sides``/``counts``/``seeds`` and accepts the remaining
:class:`~specfactor.evaluation.ExperimentConfig` fields.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import ExperimentConfig
from .field import AnalyticSpectrum, CoefficientLaw, FactorModel, two_source_model
from .grid import build_grid

__all__ = ["ConfigError", "SimulationConfig", "load_json", "parse_experiment", "parse_model", "parse_simulation"]


class ConfigError(ValueError):
    pass


_SOURCE_KEYS = {
    "rect_lowpass": {"amplitude", "cutoff_scale"},
    "rational": {"scale"},
    "constant": {"value"},
    "tabulated": {"n_side", "values"},
}
_LAW_KEYS = {"normal": {"scale"}, "fixed": {"values"}}
_MODEL_KEYS = {"d", "sources", "coefficients"}
_SIM_KEYS = _MODEL_KEYS | {"n_side", "count", "seed", "dtype"}
_EXP_KEYS = _MODEL_KEYS | {
    "n_sides", "counts", "seeds", "bandwidth_unprojected", "bandwidth_projected", "estimators",
    "eigen_count", "clip_negative", "moments_from", "dense_threshold",
}


def _reject_unknown(where: str, got, allowed) -> None:
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _parse_source(spec: dict, d: int) -> AnalyticSpectrum:
    kind = spec.get("kind")
    if kind not in _SOURCE_KEYS:
        raise ConfigError(f"unknown source kind {kind!r}")
    _reject_unknown(f"{kind} source", set(spec) - {"kind"}, _SOURCE_KEYS[kind])
    try:
        if kind == "rect_lowpass":
            return AnalyticSpectrum.rect_lowpass(spec.get("amplitude", 1.0), spec.get("cutoff_scale", 1.0))
        if kind == "rational":
            return AnalyticSpectrum.rational(spec.get("scale", 1.0))
        if kind == "constant":
            return AnalyticSpectrum.constant(spec.get("value", 1.0))
        return AnalyticSpectrum.tabulated(build_grid(d, spec["n_side"]), spec["values"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} source: {exc}") from None


def parse_model(data: dict) -> tuple[int, FactorModel]:
    """Read ``d``, ``sources`` and ``coefficients``; defaults give the two-source model."""
    d = int(data.get("d", 2))
    if "sources" not in data and "coefficients" not in data:
        return d, two_source_model()
    sources = data.get("sources")
    if not isinstance(sources, list) or not sources:
        raise ConfigError("'sources' must be a nonempty list")
    model_sources = [_parse_source(s, d) for s in sources]
    law_spec = dict(data.get("coefficients", {"kind": "normal"}))
    kind = law_spec.pop("kind", "normal")
    if kind not in _LAW_KEYS:
        raise ConfigError(f"unknown coefficient law {kind!r}")
    _reject_unknown(f"{kind} coefficients", law_spec, _LAW_KEYS[kind])
    try:
        if kind == "normal":
            law = CoefficientLaw("normal", scale=float(law_spec.get("scale", 1.0)))
        else:
            vals = law_spec.get("values")
            vals = [vals] if isinstance(vals, (int, float)) else vals
            law = CoefficientLaw("fixed", values=tuple(float(v) for v in vals))
            law.fixed_values(len(model_sources))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid coefficients: {exc}") from None
    return d, FactorModel(tuple(model_sources), law)


@dataclass
class SimulationConfig:
    d: int
    n_side: int
    count: int
    seed: int
    model: FactorModel
    dtype: str = "<f8"
    raw: dict = field(default_factory=dict, repr=False)


def parse_simulation(data: dict) -> SimulationConfig:
    _reject_unknown("simulation config", data, _SIM_KEYS)
    for key in ("n_side", "count"):
        if key not in data:
            raise ConfigError(f"simulation config needs {key!r}")
    d, model = parse_model(data)
    raw_dtype = data.get("dtype", "float64")
    dtype = {"float32": "<f4", "float64": "<f8"}.get(raw_dtype, raw_dtype)
    if dtype not in ("<f4", "<f8"):
        raise ConfigError(f"dtype must be float32 or float64, got {raw_dtype!r}")
    count = int(data["count"])
    if count < 1:
        raise ConfigError("count must be at least 1")
    return SimulationConfig(d, int(data["n_side"]), count, int(data.get("seed", 0)), model, dtype, data)


def parse_experiment(data: dict) -> ExperimentConfig:
    _reject_unknown("experiment config", data, _EXP_KEYS)
    d, model = parse_model(data)
    kwargs = {k: data[k] for k in _EXP_KEYS - _MODEL_KEYS if k in data}
    for key in ("n_sides", "counts", "seeds", "estimators"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return ExperimentConfig(model=model, d=d, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from None
