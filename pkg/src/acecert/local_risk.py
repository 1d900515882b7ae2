"""Local robustness risk: naive Monte Carlo, normal-tail parameter estimation, and AMLS.

All estimators work on a *margin function* ``h`` mapping a batch of perturbed
points ``(k, m)`` to margins ``(k,)``; a point violates the metric iff its
margin is >= 0.  The ``*_local_risk`` wrappers build ``h`` from a classifier.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import log_ndtr

from .distribution import PerturbationBall, sample_ball
from .errors import ConfigError, InsufficientDataError
from .model import Classifier, Metric, Oracle, margin_function
from .regression import RegressionModel

MarginFn = Callable[[np.ndarray], np.ndarray]

NAIVE_CHUNK = 16384


def log_normal_tail(k):
    """``log P(N(0,1) > k)``, finite for any finite ``k``."""
    # log_ndtr switches to an asymptotic expansion deep in the tail, so no underflow
    out = log_ndtr(-np.asarray(k, dtype=np.float64))
    return out if out.ndim else float(out)


def normal_tail(k):
    return np.exp(log_normal_tail(k))


class Method(enum.Enum):
    NAIVE_MC = "naive_mc"
    PARAM_EST = "param_est"
    AMLS = "amls"


@dataclass(frozen=True)
class MarginStats:
    mean: float
    std: float
    count: int
    margins: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_margins(cls, z, keep: bool = False) -> "MarginStats":
        z = np.asarray(z, dtype=np.float64)
        if z.size < 2:
            raise InsufficientDataError("margin statistics need at least 2 samples")
        return cls(float(z.mean()), float(z.std(ddof=1)), int(z.size), z if keep else None)

    @property
    def violation_fraction(self) -> Optional[float]:
        return None if self.margins is None else float(np.mean(self.margins >= 0))


@dataclass(frozen=True)
class LocalRiskEstimate:
    value: float
    method: Method
    std_error: Optional[float] = None
    log_value: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"local risk {self.value} outside [0, 1]")
        if self.log_value is None:
            object.__setattr__(self, "log_value", math.log(self.value) if self.value > 0 else -math.inf)


# --- naive Monte Carlo -------------------------------------------------------


def naive_mc(h: MarginFn, ball: PerturbationBall, M: int, rng: np.random.Generator) -> LocalRiskEstimate:
    if M < 1:
        raise ConfigError("M must be >= 1")
    hits = 0
    # chunked so large M stays within memory; the draws match a single-shot sample
    for start in range(0, M, NAIVE_CHUNK):
        k = min(NAIVE_CHUNK, M - start)
        hits += int(np.count_nonzero(h(sample_ball(ball, k, rng)) >= 0))
    p = hits / M
    return LocalRiskEstimate(p, Method.NAIVE_MC, math.sqrt(p * (1.0 - p) / M))


def naive_mc_local_risk(
    model: Classifier,
    x,
    ball: PerturbationBall,
    metric: "Metric | str",
    M: int,
    rng: np.random.Generator,
    oracle: Optional[Oracle] = None,
) -> LocalRiskEstimate:
    return naive_mc(margin_function(model, x, metric, oracle), ball, M, rng)


# --- parameter estimation ------------------------------------------------------


def param_est_local_risk(stats: MarginStats) -> LocalRiskEstimate:
    """Risk under a normal margin model: ``P(N(0,1) > -mu/sigma)``."""
    if stats.std == 0.0:
        p = 1.0 if stats.mean >= 0 else 0.0
        return LocalRiskEstimate(p, Method.PARAM_EST)
    log_p = float(log_normal_tail(-stats.mean / stats.std))
    return LocalRiskEstimate(math.exp(log_p), Method.PARAM_EST, log_value=log_p)


def log_param_tail(mean, std):
    """Vectorized ``log P(N(0,1) > -mean/std)``; ``std == 0`` gives 0 or -inf."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(std > 0, -mean / np.where(std > 0, std, 1.0), 0.0)
    out = np.asarray(log_normal_tail(k), dtype=np.float64)
    return np.where(std > 0, out, np.where(mean >= 0, 0.0, -np.inf))


# --- adaptive multi-level splitting ---------------------------------------------


class Termination(enum.Enum):
    REACHED_ZERO = "reached_zero"
    MAX_LEVELS = "max_levels"
    STUCK = "stuck"


@dataclass(frozen=True)
class AMLSConfig:
    quantile: float = 0.1
    particles: int = 200
    max_levels: int = 20
    mh_updates: int = 10
    initial_width: float = 0.5  # first-level proposal half-width as a fraction of the radius
    target_acceptance: float = 0.3
    stuck_tol: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.quantile < 1.0:
            raise ConfigError("AMLS quantile must lie in (0, 1)")
        if self.particles < 10:
            raise ConfigError("AMLS needs at least 10 particles")
        if self.max_levels < 1:
            raise ConfigError("max_levels must be >= 1")
        if self.mh_updates < 1:
            raise ConfigError("mh_updates must be >= 1")
        if not self.initial_width > 0:
            raise ConfigError("initial_width must be > 0")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ConfigError("target_acceptance must lie in (0, 1)")


@dataclass
class AMLSResult:
    log_risk: float
    levels: list
    survival_fractions: list
    terminated: Termination
    counterexamples: np.ndarray  # (k, m) final particles with margin >= 0
    counterexample_margins: np.ndarray
    acceptance_rates: list  # mean MH acceptance per mutated level
    proposal_widths: list
    forward_passes: int

    @property
    def risk(self) -> float:
        return math.exp(self.log_risk)

    @property
    def censored(self) -> bool:
        return self.terminated is not Termination.REACHED_ZERO

    def diagnostics(self) -> list:
        rows = []
        for i, (lvl, frac) in enumerate(zip(self.levels, self.survival_fractions)):
            rows.append(
                {
                    "level": lvl,
                    "survival_fraction": frac,
                    "acceptance_rate": self.acceptance_rates[i] if i < len(self.acceptance_rates) else None,
                    "proposal_width": self.proposal_widths[i] if i < len(self.proposal_widths) else None,
                }
            )
        return rows

    def write_diagnostics(self, fh) -> None:
        for row in self.diagnostics():
            fh.write(json.dumps(row) + "\n")

    def to_estimate(self) -> LocalRiskEstimate:
        return LocalRiskEstimate(self.risk, Method.AMLS, None, self.log_risk)


def reflect_into_box(Y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold points back into ``[lo, hi]`` by mirror reflection at the faces.

    Reflecting a symmetric random-walk step keeps the proposal density
    symmetric on the box, so plain Metropolis acceptance stays valid.
    """
    extent = hi - lo
    t = np.mod(Y - lo, 2.0 * extent)
    return lo + (extent - np.abs(t - extent))


def amls(h: MarginFn, ball: PerturbationBall, cfg: AMLSConfig, rng: np.random.Generator) -> AMLSResult:
    """Adaptive multi-level splitting estimate of ``P(h(x') >= 0)`` for ``x'`` uniform on ``ball``.

    Each level keeps the top ``quantile`` share of particles, refills the
    population by resampling survivors, and decorrelates the copies with
    Metropolis-Hastings moves restricted to ``{h > level}`` inside the ball
    (per-coordinate uniform steps, reflected at the ball faces).
    The estimate is the product of realized survival fractions.
    """
    n = cfg.particles
    lo, hi = ball.lower, ball.upper
    passes = 0

    X = sample_ball(ball, n, rng)
    H = np.asarray(h(X), dtype=np.float64)
    passes += n

    extent = hi - lo
    min_width = ball.radius * 1e-14
    # proposal half-width per coordinate = lam * (population spread in that coordinate);
    # the uniform start has spread extent / sqrt(12), so lam0 gives initial_width * radius
    lam = cfg.initial_width * ball.radius / float(np.mean(extent / math.sqrt(12.0)))

    levels, fractions, rates, widths = [], [], [], []
    log_risk = 0.0
    prev = -np.inf
    status = Termination.MAX_LEVELS

    for _ in range(cfg.max_levels):
        L = float(np.quantile(H, 1.0 - cfg.quantile))
        if L >= 0.0:
            frac = float(np.mean(H >= 0.0))
            log_risk += math.log(frac)
            levels.append(0.0)
            fractions.append(frac)
            status = Termination.REACHED_ZERO
            break
        alive = H > L
        if L <= prev + cfg.stuck_tol or not alive.any():
            frac = float(np.mean(H >= 0.0))
            log_risk += math.log(frac) if frac > 0 else -math.inf
            status = Termination.STUCK
            break
        frac = float(np.mean(alive))
        log_risk += math.log(frac)
        levels.append(L)
        fractions.append(frac)
        prev = L
        if len(levels) == cfg.max_levels:
            break

        survivors = np.flatnonzero(alive)
        spread = X[survivors].std(axis=0) if survivors.size > 1 else np.zeros_like(extent)
        spread = np.where(spread > 0, spread, min_width)
        refill = rng.choice(survivors, size=n - survivors.size, replace=True)
        order = np.concatenate([survivors, refill])
        X, H = X[order], H[order]

        accepted = 0
        for _ in range(cfg.mh_updates):
            width = np.clip(lam * spread, min_width, extent)
            prop = reflect_into_box(X + rng.uniform(-1.0, 1.0, size=X.shape) * width, lo, hi)
            inside = np.all((prop >= lo) & (prop <= hi), axis=1)
            Hp = np.full(n, -np.inf)
            if inside.any():
                Hp[inside] = h(prop[inside])
                passes += int(inside.sum())
            acc = inside & (Hp > L)
            X[acc] = prop[acc]
            H[acc] = Hp[acc]
            rate = float(acc.mean())
            accepted += int(acc.sum())
            lam *= math.exp(2.0 * (rate - cfg.target_acceptance))
        rates.append(accepted / (n * cfg.mh_updates))
        widths.append(float(np.mean(np.clip(lam * spread, min_width, extent))))

    hit = H >= 0.0
    if status is Termination.MAX_LEVELS:
        hit[:] = False
    return AMLSResult(
        log_risk=float(log_risk),
        levels=levels,
        survival_fractions=fractions,
        terminated=status,
        counterexamples=X[hit].copy(),
        counterexample_margins=H[hit].copy(),
        acceptance_rates=rates,
        proposal_widths=widths,
        forward_passes=passes,
    )


def local_amls(
    model: Classifier,
    x,
    ball: PerturbationBall,
    metric: "Metric | str",
    cfg: AMLSConfig,
    rng: np.random.Generator,
    oracle: Optional[Oracle] = None,
) -> AMLSResult:
    return amls(margin_function(model, x, metric, oracle), ball, cfg, rng)


# --- variance of log-risk predictions --------------------------------------------


def variance_estimator(
    regression: Optional[RegressionModel] = None,
    x: Optional[float] = None,
    replicates: Optional[Sequence[float]] = None,
) -> float:
    """Spread (standard deviation, log units) attached to one sample's log-risk.

    * ``replicates`` given (seed replicates of an AMLS log-risk): their sample SD.
    * ``x`` given: regression prediction spread at that regressor value.
    * otherwise: the regression residual SD.
    """
    if replicates is not None:
        reps = np.asarray(replicates, dtype=np.float64)
        reps = reps[np.isfinite(reps)]
        if reps.size >= 2:
            return float(reps.std(ddof=1))
    if regression is None:
        raise InsufficientDataError("no regression available to estimate the variance")
    if regression.n_points < 3:
        raise InsufficientDataError("residual variance needs at least 3 calibration points")
    if x is None:
        return float(regression.residual_std)
    return float(regression.prediction_std(x))
