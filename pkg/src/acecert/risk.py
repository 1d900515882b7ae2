"""Global risk terms: classification risk, boundary risk, ground-truth boundary
risk, and an empirical check of how they combine into the robustness risks.

Membership of a nominal in the r-neighbourhood of a decision boundary is tested
constructively: it counts when some probed point of ``B(x, r)`` flips the label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as rngs
from .distribution import GeneratorSpec, PerturbationBall, sample_ball, sample_nominal
from .errors import ConfigError, UnsupportedMetricError
from .local_risk import AMLSConfig, Termination, amls
from .model import Classifier, CountingClassifier, predict_batch, score_margins

NAIVE = "naive_mc"
AMLS_DETECTOR = "amls"


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    count: int
    detector: Optional[str] = None
    probes: Optional[int] = None

    @classmethod
    def from_indicators(cls, ind, **kw) -> "RiskEstimate":
        ind = np.asarray(ind, dtype=np.float64)
        p = float(ind.mean())
        return cls(p, math.sqrt(p * (1.0 - p) / ind.size), int(ind.size), **kw)


def _need_oracle(gen: GeneratorSpec):
    if gen.oracle is None:
        raise UnsupportedMetricError("this risk term needs a generator with a ground-truth oracle")
    return gen.oracle


def _nominals(model, gen, N, seed):
    oracle = _need_oracle(gen)
    X = sample_nominal(gen, count=N, seed=seed).nominals
    return X, predict_batch(model, X), oracle(X)


def _probe_set(x, r, M, seed, i, tag, clip=(None, None)):
    """The nominal itself followed by ``M`` uniform ball draws (just the nominal when ``r == 0``)."""
    if r == 0 or M == 0:
        return x[None, :]
    ball = PerturbationBall(x, r, clip_lo=clip[0], clip_hi=clip[1])
    return np.vstack([x[None, :], sample_ball(ball, M, rngs.stream(seed, rngs.PROBE, i, tag))])


def classification_risk(model: Classifier, gen: GeneratorSpec, N: int, seed: int = 0) -> RiskEstimate:
    """Fraction of generated nominals the model misclassifies."""
    _, pred, label = _nominals(model, gen, N, seed)
    return RiskEstimate.from_indicators(pred != label)


def _flip_detector(model, detector, M, amls_cfg, seed, i, r):
    """Return ``fires(x, ref)``: does some point of ``B(x, r)`` leave class ``ref``?"""

    def naive(x, ref):
        P = _probe_set(x, r, M, seed, i, 1)
        return bool(np.any(score_margins(model.scores(P), ref) >= 0))

    def splitting(x, ref):
        if r == 0:
            return bool(score_margins(model.scores(x[None, :]), ref)[0] >= 0)
        ball = PerturbationBall(x, r)
        res = amls(lambda X: score_margins(model.scores(X), ref), ball, amls_cfg, rngs.stream(seed, rngs.PROBE, i, 2))
        return res.terminated is Termination.REACHED_ZERO

    if detector == NAIVE:
        return naive
    if detector == AMLS_DETECTOR:
        return splitting
    raise ConfigError(f"unknown detector {detector!r}; expected {NAIVE!r} or {AMLS_DETECTOR!r}")


def boundary_risk(
    model: Classifier,
    gen: GeneratorSpec,
    N: int,
    r: float,
    detector: str = NAIVE,
    seed: int = 0,
    M: int = 1000,
    amls_cfg: Optional[AMLSConfig] = None,
) -> RiskEstimate:
    """Fraction of nominals that are correctly classified yet have a prediction flip within ``r``."""
    if r < 0:
        raise ConfigError("radius must be >= 0")
    amls_cfg = amls_cfg or AMLSConfig()
    X, pred, label = _nominals(model, gen, N, seed)
    ind = np.zeros(N, dtype=bool)
    for i in np.flatnonzero(pred == label):
        fires = _flip_detector(model, detector, M, amls_cfg, seed, i, r)
        ind[i] = fires(X[i], pred[i])
    probes = M if detector == NAIVE else amls_cfg.particles
    return RiskEstimate.from_indicators(ind, detector=detector, probes=probes)


def ground_truth_boundary_risk(
    model: Classifier, gen: GeneratorSpec, N: int, r: float, seed: int = 0, M: int = 1000
) -> RiskEstimate:
    """Correct nominals near a ground-truth boundary but not near the model's.

    One probe set per nominal serves both tests: the oracle must change label
    somewhere on it and the model must not.
    """
    if r < 0:
        raise ConfigError("radius must be >= 0")
    X, pred, label = _nominals(model, gen, N, seed)
    oracle = gen.oracle
    ind = np.zeros(N, dtype=bool)
    for i in np.flatnonzero(pred == label):
        P = _probe_set(X[i], r, M, seed, i, 1)
        oracle_flip = np.any(oracle(P) != label[i])
        model_flip = np.any(score_margins(model.scores(P), pred[i]) >= 0)
        ind[i] = oracle_flip and not model_flip
    return RiskEstimate.from_indicators(ind, detector=NAIVE, probes=M)


@dataclass
class RiskDecomposition:
    r_c: float
    r_b: float
    r_gb: float
    r_rob: dict  # metric -> value
    count: int
    standard_errors: dict
    residuals: dict
    residual_se: dict
    probes: int
    radius: float
    budget: dict = field(default_factory=dict)

    def m1_equality_holds(self, k: float = 3.0) -> bool:
        return abs(self.residuals["m1"]) <= k * self.residual_se["m1"]

    def m2_inequality_holds(self, k: float = 3.0) -> bool:
        return self.residuals["m2"] <= k * self.residual_se["m2"]

    def to_dict(self) -> dict:
        return {
            "r_c": self.r_c,
            "r_b": self.r_b,
            "r_gb": self.r_gb,
            "r_rob_m0": self.r_rob["m0"],
            "r_rob_m1": self.r_rob["m1"],
            "r_rob_m2": self.r_rob["m2"],
            "residuals": self.residuals,
            "residual_standard_errors": self.residual_se,
            "standard_errors": self.standard_errors,
            "detector": {"type": NAIVE, "probes_per_nominal": self.probes},
            "radius": self.radius,
            "count": self.count,
            "budget": self.budget,
        }


def _mean_se(v):
    v = np.asarray(v, dtype=np.float64)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def decomposition_check(
    model: Classifier, gen: GeneratorSpec, N: int, M: int, r: float, seed: int = 0
) -> RiskDecomposition:
    """Estimate every term and the residuals between robustness risks and their decomposition.

    The robustness risks use one probe set per nominal and the boundary terms
    another, both on the same nominals.  Residual standard errors come from the
    per-nominal paired differences, so they account for the shared nominals.
    With ``r == 0`` each probe set is the nominal alone.
    """
    if r < 0:
        raise ConfigError("radius must be >= 0")
    if M < 0:
        raise ConfigError("M must be >= 0")
    oracle = _need_oracle(gen)
    counted = CountingClassifier(model)
    X = sample_nominal(gen, count=N, seed=seed).nominals
    pred = predict_batch(counted, X)
    label = oracle(X)

    wrong = (pred != label).astype(float)
    rob = {"m0": np.zeros(N), "m1": np.zeros(N), "m2": np.zeros(N)}
    rb = np.zeros(N)
    rgb = np.zeros(N)
    for i in range(N):
        # robustness risks: any violation on the probe set
        P = _probe_set(X[i], r, M, seed, i, 0)
        S = counted.scores(P)
        rob["m0"][i] = np.any(score_margins(S, oracle(P)) >= 0)
        rob["m1"][i] = np.any(score_margins(S, label[i]) >= 0)
        rob["m2"][i] = np.any(score_margins(S, pred[i]) >= 0)
        if wrong[i]:
            continue
        # boundary terms on an independent probe set
        Q = _probe_set(X[i], r, M, seed, i, 1)
        model_flip = np.any(score_margins(counted.scores(Q), pred[i]) >= 0)
        rb[i] = model_flip
        rgb[i] = (not model_flip) and np.any(oracle(Q) != label[i])

    r_c, se_c = _mean_se(wrong)
    r_b, se_b = _mean_se(rb)
    r_gb, se_gb = _mean_se(rgb)
    values, ses = {}, {"r_c": se_c, "r_b": se_b, "r_gb": se_gb}
    for k, v in rob.items():
        values[k], ses[f"r_rob_{k}"] = _mean_se(v)

    residuals, residual_se = {}, {}
    for k, d in (
        ("m1", rob["m1"] - (wrong + rb)),
        ("m2", rob["m2"] - (wrong + rb)),
        ("m0", rob["m0"] - (wrong + rb + rgb)),
    ):
        residuals[k], residual_se[k] = _mean_se(d)
    return RiskDecomposition(
        r_c, r_b, r_gb, values, N, ses, residuals, residual_se, M, float(r),
        {"forward_passes": counted.forward_passes},
    )
