"""Hierarchical generators of nominal inputs, ground-truth oracles, and l_inf perturbation balls.

A generator is a per-class program: a list of stages executed in order.
Each stage either draws fresh randomness or transforms the value produced by
the stage before it:

* ``gaussian(mean, std)`` and ``uniform(lo, hi)`` draw a vector; when a
  previous value exists the draw is *added* to it (a conditional stage).
* ``affine(matrix, offset)`` maps the previous value ``v`` to ``matrix @ v + offset``.
* ``clamp(lo, hi)`` clips the previous value coordinate-wise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import rng as rngs
from .errors import ConfigError

ALL = "all"


def _vec(v, name: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if a.ndim != 1 or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be a finite vector")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianStage:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean, std = _vec(self.mean, "gaussian mean"), _vec(self.std, "gaussian std")
        if mean.shape != std.shape:
            raise ConfigError("gaussian mean and std must have the same length")
        if np.any(std <= 0):
            raise ConfigError("every gaussian stddev entry must be > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def out_dim(self, in_dim):
        if in_dim is not None and in_dim != self.mean.size:
            raise ConfigError(f"gaussian stage of size {self.mean.size} follows a stage of size {in_dim}")
        return self.mean.size

    def run(self, prev, rng):
        draw = self.mean + self.std * rng.standard_normal(self.mean.size)
        return draw if prev is None else prev + draw

    def to_dict(self):
        return {"type": "gaussian", "mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass(frozen=True)
class UniformStage:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo, "uniform lo"), _vec(self.hi, "uniform hi")
        if lo.shape != hi.shape:
            raise ConfigError("uniform lo and hi must have the same length")
        if np.any(lo >= hi):
            raise ConfigError("uniform stage requires lo < hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def out_dim(self, in_dim):
        if in_dim is not None and in_dim != self.lo.size:
            raise ConfigError(f"uniform stage of size {self.lo.size} follows a stage of size {in_dim}")
        return self.lo.size

    def run(self, prev, rng):
        draw = rng.uniform(self.lo, self.hi)
        return draw if prev is None else prev + draw

    def to_dict(self):
        return {"type": "uniform", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class AffineStage:
    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        b = _vec(self.offset, "affine offset")
        if A.shape[0] != b.size:
            raise ConfigError("affine offset length must equal the matrix row count")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "offset", b)

    def out_dim(self, in_dim):
        if in_dim is None:
            raise ConfigError("an affine stage needs a previous stage")
        if in_dim != self.matrix.shape[1]:
            raise ConfigError(f"affine stage expects {self.matrix.shape[1]} inputs, previous stage gives {in_dim}")
        return self.matrix.shape[0]

    def run(self, prev, rng):
        return self.matrix @ prev + self.offset

    def to_dict(self):
        return {"type": "affine", "matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


@dataclass(frozen=True)
class ClampStage:
    lo: Union[float, np.ndarray]
    hi: Union[float, np.ndarray]

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(lo >= hi):
            raise ConfigError("clamp stage requires lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def out_dim(self, in_dim):
        if in_dim is None:
            raise ConfigError("a clamp stage needs a previous stage")
        return in_dim

    def run(self, prev, rng):
        return np.clip(prev, self.lo, self.hi)

    def to_dict(self):
        return {"type": "clamp", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


STAGE_TYPES = {"gaussian": GaussianStage, "uniform": UniformStage, "affine": AffineStage, "clamp": ClampStage}


def stage_from_dict(doc: dict):
    doc = dict(doc)
    kind = doc.pop("type", None)
    if kind not in STAGE_TYPES:
        raise ConfigError(f"unknown stage type {kind!r}")
    try:
        return STAGE_TYPES[kind](**doc)
    except TypeError as exc:
        raise ConfigError(f"bad fields for {kind} stage: {exc}") from exc


@dataclass(frozen=True)
class NearestTemplateOracle:
    """Ground truth ``c(x)``: index of the closest template (Euclidean), lowest index on ties."""

    templates: np.ndarray

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.templates, dtype=np.float64))
        T.setflags(write=False)
        object.__setattr__(self, "templates", T)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        d2 = ((X[:, None, :] - self.templates[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def boundary_distance(self, X: np.ndarray) -> np.ndarray:
        """Exact l_inf distance from each row of ``X`` to the nearest ground-truth boundary."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        T = self.templates
        labels = self(X)
        out = np.full(X.shape[0], np.inf)
        for j in range(T.shape[0]):
            Ti = T[labels]
            grad = 2.0 * (Ti - T[j])  # gradient of ||x - t_j||^2 - ||x - t_i||^2
            gap = ((X - T[j]) ** 2).sum(1) - ((X - Ti) ** 2).sum(1)
            norm1 = np.abs(grad).sum(1)
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.where(labels == j, np.inf, gap / norm1)
            out = np.minimum(out, dist)
        return out

    def to_dict(self):
        return {"type": "nearest_template", "templates": self.templates.tolist()}


@dataclass(frozen=True)
class GeneratorSpec:
    """Per-class hierarchical generator ``G(phi, R, psi)`` with an analytic oracle."""

    classes: tuple  # one tuple of stages per class label psi
    oracle: Optional[NearestTemplateOracle] = None
    separation_margin: float = 0.0

    def __post_init__(self):
        classes = tuple(tuple(stages) for stages in self.classes)
        if not classes:
            raise ConfigError("a generator needs at least one class")
        dims = set()
        for psi, stages in enumerate(classes):
            dim = None
            for stage in stages:
                dim = stage.out_dim(dim)
            if dim is None:
                raise ConfigError(f"class {psi} has no stages")
            dims.add(dim)
        if len(dims) != 1:
            raise ConfigError(f"all classes must produce the same output dimension, got {sorted(dims)}")
        if self.oracle is not None and self.oracle.templates.shape[1] != dims.copy().pop():
            raise ConfigError("oracle templates do not match the generator output dimension")
        if self.separation_margin < 0:
            raise ConfigError("separation_margin must be nonnegative")
        object.__setattr__(self, "classes", classes)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def output_dim(self) -> int:
        dim = None
        for stage in self.classes[0]:
            dim = stage.out_dim(dim)
        return dim

    def run_class(self, psi: int, rng: np.random.Generator) -> np.ndarray:
        value = None
        for stage in self.classes[psi]:
            value = stage.run(value, rng)
        return value

    def to_dict(self) -> dict:
        doc = {
            "class_count": self.class_count,
            "output_dim": self.output_dim,
            "classes": [{"stages": [s.to_dict() for s in stages]} for stages in self.classes],
            "separation_margin": self.separation_margin,
        }
        if self.oracle is not None:
            doc["oracle"] = self.oracle.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        try:
            classes = [[stage_from_dict(s) for s in c["stages"]] for c in doc["classes"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed generator document: {exc}") from exc
        oracle = None
        if doc.get("oracle") is not None:
            if doc["oracle"].get("type") != "nearest_template":
                raise ConfigError(f"unsupported oracle type {doc['oracle'].get('type')!r}")
            oracle = NearestTemplateOracle(doc["oracle"]["templates"])
        gen = cls(tuple(classes), oracle, float(doc.get("separation_margin", 0.0)))
        if "class_count" in doc and int(doc["class_count"]) != gen.class_count:
            raise ConfigError("class_count disagrees with the number of class programs")
        if "output_dim" in doc and int(doc["output_dim"]) != gen.output_dim:
            raise ConfigError("output_dim disagrees with the stage hierarchy")
        return gen


def load_generator(path: "str | Path") -> GeneratorSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return GeneratorSpec.from_dict(doc)


def save_generator(gen: GeneratorSpec, path: "str | Path") -> None:
    Path(path).write_text(json.dumps(gen.to_dict()))


@dataclass(frozen=True)
class SampleBatch:
    nominals: np.ndarray  # (N, m)
    labels: np.ndarray  # (N,) generating class psi
    seed: int
    stream_ids: np.ndarray = field(default=None)

    def __len__(self):
        return self.nominals.shape[0]


def sample_nominal(
    gen: GeneratorSpec, cls: "int | str" = ALL, count: int = 1, seed: int = 0, start: int = 0
) -> SampleBatch:
    """Draw ``count`` i.i.d. nominal inputs; sample ``i`` uses stream ``start + i``.

    With ``cls=ALL`` each sample first picks its class uniformly at random.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    if cls != ALL and not (0 <= int(cls) < gen.class_count):
        raise ConfigError(f"class index {cls} out of range [0, {gen.class_count})")
    X = np.empty((count, gen.output_dim))
    labels = np.empty(count, dtype=np.int64)
    ids = np.arange(start, start + count)
    for row, sid in enumerate(ids):
        g = rngs.stream(seed, rngs.NOMINAL, sid)
        psi = int(g.integers(gen.class_count)) if cls == ALL else int(cls)
        labels[row] = psi
        X[row] = gen.run_class(psi, g)
    return SampleBatch(X, labels, seed, ids)


def ground_truth(gen: GeneratorSpec, x: Sequence[float]) -> int:
    if gen.oracle is None:
        raise ConfigError("this generator declares no ground-truth oracle")
    return int(gen.oracle(np.asarray(x, dtype=np.float64)[None, :])[0])


@dataclass(frozen=True)
class PerturbationBall:
    """l_inf ball ``B(center, radius)``, optionally intersected with a box ``[clip_lo, clip_hi]``."""

    center: np.ndarray
    radius: float
    norm: str = "linf"
    clip_lo: Optional[float] = None
    clip_hi: Optional[float] = None

    def __post_init__(self):
        c = _vec(self.center, "ball center")
        if not self.radius > 0:
            raise ConfigError("ball radius must be > 0")
        if self.norm != "linf":
            raise ConfigError(f"only the linf norm is implemented, got {self.norm!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def lower(self) -> np.ndarray:
        lo = self.center - self.radius
        return lo if self.clip_lo is None else np.maximum(lo, self.clip_lo)

    @property
    def upper(self) -> np.ndarray:
        hi = self.center + self.radius
        return hi if self.clip_hi is None else np.minimum(hi, self.clip_hi)

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)


def sample_ball(ball: PerturbationBall, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the ball (per-coordinate uniform on the box for l_inf)."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    lo, hi = ball.lower, ball.upper
    # the clip guards against rounding past the upper face
    return np.minimum(lo + (hi - lo) * rng.random((count, lo.size)), hi)
