"""Flat TOML run configuration.

Example::

    model = "model.json"          # relative paths resolve against this file
    generator = "generator.json"
    N = 200
    M = 200
    N0 = 40
    radius = 0.5
    metric = "m2"
    seed = 1
    t_values = [1e-5, 1e-10]
    amls_particles = 200
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ace import DEFAULT_T_VALUES, CertificationConfig
from .bench import METHODS, BenchConfig
from .errors import ConfigError
from .local_risk import AMLSConfig

_AMLS_KEYS = {
    "amls_quantile": ("quantile", float),
    "amls_particles": ("particles", int),
    "amls_max_levels": ("max_levels", int),
    "amls_mh_updates": ("mh_updates", int),
    "amls_initial_width": ("initial_width", float),
    "amls_target_acceptance": ("target_acceptance", float),
}

_CERT_KEYS = {
    "N": int,
    "M": int,
    "N0": int,
    "radius": float,
    "metric": str,
    "seed": int,
    "rho": float,
    "epsilon": float,
    "delta": float,
    "include_censored": bool,
    "amls_replicates": int,
    "workers": int,
    "clip_lo": float,
    "clip_hi": float,
}

_OTHER_KEYS = {
    "model": str,
    "generator": str,
    "t_values": list,
    "bench_methods": list,
    "bench_repetitions": int,
    "bench_naive_M": int,
    "bench_budget": int,
    "bench_t_values": list,
    "mine_per_nominal": int,
    "mine_merge_radius": float,
    "mine_extremes_only": bool,
}

REQUIRED = ("model", "generator", "N", "M", "N0", "radius")


@dataclass(frozen=True)
class MineOptions:
    per_nominal: int = 5
    merge_radius: float = 0.0
    extremes_only: bool = False


@dataclass(frozen=True)
class RunConfig:
    path: Optional[Path]
    model_path: Path
    generator_path: Path
    certification: CertificationConfig
    bench: BenchConfig
    mine: MineOptions
    raw: dict

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None, t_values=None) -> "RunConfig":
        cert = self.certification
        if seed is not None:
            cert = replace(cert, seed=seed)
        if workers is not None:
            cert = replace(cert, workers=workers)
        if t_values is not None:
            cert = replace(cert, t_values=tuple(t_values))
        bench = replace(self.bench, ace=cert)
        return replace(self, certification=cert, bench=bench)


def _typed(key, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if (kind is int and isinstance(value, bool)) or not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} must be of type {kind.__name__}, got {value!r}")
    return value


def _floats(key, values):
    if not isinstance(values, list) or not values:
        raise ConfigError(f"config key {key!r} must be a non-empty list of numbers")
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} must be a list of numbers, got {values!r}") from None


def parse_config(doc: dict, base: Optional[Path] = None, path: Optional[Path] = None) -> RunConfig:
    known = set(_AMLS_KEYS) | set(_CERT_KEYS) | set(_OTHER_KEYS)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    base = Path(".") if base is None else base

    amls_kw = {field: _typed(k, doc[k], kind) for k, (field, kind) in _AMLS_KEYS.items() if k in doc}
    cert_kw = {k: _typed(k, doc[k], kind) for k, kind in _CERT_KEYS.items() if k in doc}
    cert_kw["t_values"] = _floats("t_values", doc["t_values"]) if "t_values" in doc else DEFAULT_T_VALUES
    cert = CertificationConfig(amls=AMLSConfig(**amls_kw), **cert_kw)

    bench_kw = {}
    if "bench_methods" in doc:
        methods = doc["bench_methods"]
        if not isinstance(methods, list) or any(m not in METHODS for m in methods):
            raise ConfigError(f"bench_methods must be a list drawn from {list(METHODS)}, got {methods!r}")
        bench_kw["methods"] = tuple(methods)
    if "bench_repetitions" in doc:
        bench_kw["repetitions"] = _typed("bench_repetitions", doc["bench_repetitions"], int)
    if "bench_naive_M" in doc:
        bench_kw["naive_M"] = _typed("bench_naive_M", doc["bench_naive_M"], int)
    if "bench_budget" in doc:
        bench_kw["budget"] = _typed("bench_budget", doc["bench_budget"], int)
    if "bench_t_values" in doc:
        bench_kw["t_values"] = _floats("bench_t_values", doc["bench_t_values"])
    bench = BenchConfig(cert, **bench_kw)

    mine = MineOptions(
        per_nominal=_typed("mine_per_nominal", doc.get("mine_per_nominal", 5), int),
        merge_radius=_typed("mine_merge_radius", doc.get("mine_merge_radius", 0.0), float),
        extremes_only=_typed("mine_extremes_only", doc.get("mine_extremes_only", False), bool),
    )
    if mine.per_nominal < 1:
        raise ConfigError("mine_per_nominal must be >= 1")
    model = base / _typed("model", doc["model"], str)
    generator = base / _typed("generator", doc["generator"], str)
    return RunConfig(path, model, generator, cert, bench, mine, dict(doc))


def load_config(path: "str | Path") -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message already carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(doc, base=path.parent, path=path)
