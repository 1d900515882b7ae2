"""The ACE pipeline: margin statistics on many nominals, AMLS on a calibration
subset, a log-log regression between the two, and the cumulative robustness
curve ``R(t)`` assembled from the per-sample predictions."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import rng as rngs
from .distribution import GeneratorSpec, PerturbationBall, sample_ball, sample_nominal
from .errors import ConfigError, InsufficientDataError
from .local_risk import (
    AMLSConfig,
    AMLSResult,
    MarginStats,
    Termination,
    amls,
    log_param_tail,
    variance_estimator,
)
from .model import Classifier, CountingClassifier, Metric, margin_function, predict
from .regression import RegressionModel, fit_log_regression

DEFAULT_T_VALUES = (1e-5, 1e-10, 1e-15)

# method tags stored per curve entry
AMLS_ENTRY = "amls"
CENSORED_ENTRY = "amls_censored"
PREDICTED_ENTRY = "ace"


def pac_sample_size(epsilon: float, delta: float) -> int:
    """Two-sided Hoeffding sample size ``ceil(ln(2/delta) / (2 eps^2))`` for a [0,1] mean."""
    if not (0.0 < epsilon <= 1.0 and 0.0 < delta <= 1.0):
        raise ConfigError("epsilon and delta must lie in (0, 1]")
    return int(math.ceil(math.log(2.0 / delta) / (2.0 * epsilon * epsilon)))


@dataclass(frozen=True)
class CertificationConfig:
    N: int
    M: int
    N0: int
    radius: float
    metric: Metric = Metric.M2
    amls: AMLSConfig = field(default_factory=AMLSConfig)
    seed: int = 0
    rho: float = 0.0
    epsilon: float = 0.05
    delta: float = 0.05
    t_values: tuple = DEFAULT_T_VALUES
    include_censored: bool = False
    amls_replicates: int = 1
    workers: int = 1
    clip_lo: Optional[float] = None
    clip_hi: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        object.__setattr__(self, "t_values", tuple(float(t) for t in self.t_values))
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if not 1 <= self.N0 <= self.N:
            raise ConfigError(f"N0 must satisfy 1 <= N0 <= N, got N0={self.N0}, N={self.N}")
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")
        if not self.radius > 0:
            raise ConfigError(f"radius must be > 0, got {self.radius}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if not (0.0 < self.epsilon <= 1.0 and 0.0 < self.delta <= 1.0):
            raise ConfigError("epsilon and delta must lie in (0, 1]")
        for t in self.t_values:
            _check_t(t)
        if self.amls_replicates < 1:
            raise ConfigError("amls_replicates must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metric"] = self.metric.value
        d["t_values"] = list(self.t_values)
        return d

    def fingerprint(self) -> str:
        # the worker count never changes results, so it is left out
        d = self.to_dict()
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _check_t(t) -> None:
    if not (0.0 < t <= 1.0):
        raise ConfigError(f"threshold t must lie in (0, 1], got {t}")


# --- cumulative robustness curve ---------------------------------------------


@dataclass(frozen=True)
class CumulativeRobustnessCurve:
    """Per-sample lognormal models ``log p_i ~ N(mu_i, sigma_i^2)`` of the local risk."""

    mu: np.ndarray
    sigma: np.ndarray
    methods: tuple
    metric: Optional[Metric] = None
    radius: Optional[float] = None
    fingerprint: Optional[str] = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.shape != sigma.shape or len(self.methods) != mu.size:
            raise ConfigError("curve columns have different lengths")
        if mu.size == 0:
            raise ConfigError("a curve needs at least one entry")
        if np.any(np.isnan(mu)) or np.any(~np.isfinite(sigma)) or np.any(sigma < 0):
            raise ConfigError("curve entries need mu not NaN and finite sigma >= 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "methods", tuple(self.methods))

    def __len__(self):
        return self.mu.size

    def entry_probabilities(self, t: float) -> np.ndarray:
        """``P(N(mu_i, sigma_i) <= log t)`` per entry (a step where ``sigma_i = 0``)."""
        _check_t(t)
        lt = math.log(t)
        pos = self.sigma > 0
        out = (self.mu <= lt).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            z = (lt - self.mu[pos]) / self.sigma[pos]
        out[pos] = ndtr(z)
        return out

    def evaluate(self, t):
        if np.ndim(t) == 0:
            return float(np.mean(self.entry_probabilities(float(t))))
        return np.array([self.evaluate(float(v)) for v in np.ravel(t)])

    def standard_error(self, t: float) -> float:
        """Sampling SE of ``R(t)`` as a mean over nominals."""
        v = self.entry_probabilities(t)
        if v.size < 2:
            return 0.0
        return float(v.std(ddof=1) / math.sqrt(v.size))

    # -- files -----------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "mu_hat", "sigma_hat", "method"])
        for i, (m, s, tag) in enumerate(zip(self.mu, self.sigma, self.methods)):
            w.writerow([i, repr(float(m)), repr(float(s)), tag])
        return buf.getvalue()

    def write_csv(self, path: "str | Path") -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, **meta) -> "CumulativeRobustnessCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["index", "mu_hat", "sigma_hat", "method"]:
            raise ConfigError("curve CSV must start with the header index,mu_hat,sigma_hat,method")
        mu, sigma, methods = [], [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                mu.append(float(row[1]))
                sigma.append(float(row[2]))
                methods.append(row[3])
            except (IndexError, ValueError) as exc:
                raise ConfigError(f"line {lineno}: malformed curve row {row!r}") from exc
        return cls(np.array(mu), np.array(sigma), tuple(methods), **meta)

    @classmethod
    def read_csv(cls, path: "str | Path", **meta) -> "CumulativeRobustnessCurve":
        return cls.from_csv(Path(path).read_text(), **meta)

    def grid_csv(self, t_grid: Optional[Sequence[float]] = None) -> str:
        t_grid = log_t_grid() if t_grid is None else t_grid
        lines = ["t,R_t"]
        for t in t_grid:
            lines.append(f"{float(t)!r},{self.evaluate(float(t))!r}")
        return "\n".join(lines) + "\n"


def log_t_grid(lo_exp: float = -20.0, points: int = 101) -> np.ndarray:
    return np.logspace(lo_exp, 0.0, points)


def evaluate_curve(curve: CumulativeRobustnessCurve, t: float) -> float:
    """``R(t)``: mean over entries of the normal CDF of ``log t``."""
    return curve.evaluate(t)


def criterion_satisfied(r_t: float, r_star: float, rho: float) -> bool:
    """Relaxed global criterion: thresholded risk ``1 - R(t)`` at most ``R* + rho``."""
    return (1.0 - r_t) <= r_star + rho


# --- the pipeline ---------------------------------------------------------------


@dataclass
class SampleResult:
    index: int
    prediction: int
    label: Optional[int]
    stats: MarginStats
    amls_runs: list  # AMLSResult per replicate; empty outside the calibration subset
    forward_passes: int
    nominal_passes: int
    perturbation_passes: int
    amls_passes: int

    @property
    def amls(self) -> Optional[AMLSResult]:
        return self.amls_runs[0] if self.amls_runs else None

    @property
    def log_amls(self) -> float:
        """Calibration target: log of the mean risk over replicates."""
        risks = [r.risk for r in self.amls_runs]
        m = float(np.mean(risks))
        return math.log(m) if m > 0 else -math.inf


@dataclass
class CertificationReport:
    config: CertificationConfig
    curve: CumulativeRobustnessCurve
    samples: list
    nominals: np.ndarray
    regression: Optional[RegressionModel]
    r_star: float
    r_star_se: float
    criterion_results: list
    budget: dict
    calibration_indices: list
    runtime_s: float = 0.0
    curve_ref: str = "curve.csv"

    def thresholded_risk(self, t: float) -> float:
        return 1.0 - self.curve.evaluate(t)

    def criterion(self, t: float, rho: Optional[float] = None) -> bool:
        rho = self.config.rho if rho is None else rho
        return criterion_satisfied(self.curve.evaluate(t), self.r_star, rho)

    @property
    def amls_results(self) -> dict:
        return {s.index: s.amls for s in self.samples if s.amls_runs}

    @property
    def all_passed(self) -> bool:
        return all(c["satisfied"] for c in self.criterion_results)

    def to_dict(self) -> dict:
        terms = {}
        for s in self.samples:
            if s.amls_runs:
                key = s.amls.terminated.value
                terms[key] = terms.get(key, 0) + 1
        n_pac = pac_sample_size(self.config.epsilon, self.config.delta)
        return {
            "config": self.config.to_dict(),
            "fingerprint": self.config.fingerprint(),
            "r_star": self.r_star,
            "r_star_se": self.r_star_se,
            "criterion_results": self.criterion_results,
            "budget": self.budget,
            "curve_ref": self.curve_ref,
            "regression": None if self.regression is None else self.regression.to_dict(),
            "calibration_points": len(self.calibration_indices),
            "amls_terminations": terms,
            "pac": {
                "epsilon": self.config.epsilon,
                "delta": self.config.delta,
                "required_N": n_pac,
                "N": self.config.N,
                "sufficient": self.config.N >= n_pac,
            },
            "counterexamples": int(sum(len(s.amls.counterexamples) for s in self.samples if s.amls_runs)),
        }

    def samples_csv(self) -> str:
        """Raw per-sample point estimates next to the smoothed curve entries."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "prediction", "label", "mu_z", "sigma_z", "log_param_tail", "log_amls", "termination"])
        for s in self.samples:
            x = float(log_param_tail(s.stats.mean, s.stats.std))
            w.writerow(
                [
                    s.index,
                    s.prediction,
                    "" if s.label is None else s.label,
                    repr(s.stats.mean),
                    repr(s.stats.std),
                    repr(x),
                    repr(s.log_amls) if s.amls_runs else "",
                    s.amls.terminated.value if s.amls_runs else "",
                ]
            )
        return buf.getvalue()


def _run_sample(model: Classifier, oracle, x: np.ndarray, i: int, cfg: CertificationConfig, with_amls: bool) -> SampleResult:
    counted = CountingClassifier(model)
    pred = predict(counted, x)
    nominal_passes = counted.forward_passes
    label = None if oracle is None else int(oracle(x[None, :])[0])
    if cfg.metric is Metric.M1:
        ref = label
    elif cfg.metric is Metric.M2:
        ref = pred
    else:
        ref = None
    h = margin_function(counted, x, cfg.metric, oracle, reference=ref)
    ball = PerturbationBall(x, cfg.radius, clip_lo=cfg.clip_lo, clip_hi=cfg.clip_hi)

    z = h(sample_ball(ball, cfg.M, rngs.stream(cfg.seed, rngs.BALL, i)))
    stats = MarginStats.from_margins(z)
    perturbation_passes = counted.forward_passes - nominal_passes

    runs = []
    if with_amls:
        for rep in range(cfg.amls_replicates):
            runs.append(amls(h, ball, cfg.amls, rngs.stream(cfg.seed, rngs.AMLS, i, rep)))
    amls_passes = counted.forward_passes - nominal_passes - perturbation_passes
    return SampleResult(
        i, pred, label, stats, runs, counted.forward_passes, nominal_passes, perturbation_passes, amls_passes
    )


def run_certification(model: Classifier, generator: GeneratorSpec, cfg: CertificationConfig) -> CertificationReport:
    """Run the full pipeline for one classifier, generator and configuration."""
    if cfg.N0 < 3:
        raise InsufficientDataError(f"the calibration subset needs N0 >= 3, got {cfg.N0}")
    if cfg.metric is not Metric.M2 and generator.oracle is None:
        raise ConfigError(f"metric {cfg.metric.value} needs a generator with a ground-truth oracle")
    if generator.output_dim != model.input_dim:
        raise ConfigError(f"generator emits {generator.output_dim}-vectors but the model expects {model.input_dim}")
    start = time.perf_counter()
    batch = sample_nominal(generator, count=cfg.N, seed=cfg.seed)
    oracle = generator.oracle

    def work(i):
        return _run_sample(model, oracle, batch.nominals[i], i, cfg, i < cfg.N0)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            samples = list(pool.map(work, range(cfg.N)))
    else:
        samples = [work(i) for i in range(cfg.N)]

    mu_z = np.array([s.stats.mean for s in samples])
    sd_z = np.array([s.stats.std for s in samples])
    x = log_param_tail(mu_z, sd_z)

    # calibration pairs (x_i, log p_i)
    calib = []
    for s in samples[: cfg.N0]:
        if s.amls.censored and not cfg.include_censored:
            continue
        y = s.log_amls
        if np.isfinite(x[s.index]) and np.isfinite(y):
            calib.append(s.index)
    if len(calib) < 3:
        raise InsufficientDataError(
            f"only {len(calib)} usable calibration points (need 3); raise N0 or the radius, "
            "or include censored AMLS runs"
        )
    reg = fit_log_regression(x[calib], [samples[i].log_amls for i in calib])

    mu = np.empty(cfg.N)
    sigma = np.empty(cfg.N)
    methods = []
    for s in samples:
        i = s.index
        if s.amls_runs:
            mu[i] = s.log_amls
            reps = [r.log_risk for r in s.amls_runs]
            sigma[i] = variance_estimator(reg, replicates=reps) if np.isfinite(mu[i]) else 0.0
            methods.append(CENSORED_ENTRY if s.amls.censored else AMLS_ENTRY)
        elif np.isfinite(x[i]):
            mu[i] = min(float(reg.predict(x[i])), 0.0)
            sigma[i] = variance_estimator(reg, x=x[i])
            methods.append(PREDICTED_ENTRY)
        else:
            # every margin identical and negative: no violation mass at all
            mu[i] = -math.inf
            sigma[i] = 0.0
            methods.append(PREDICTED_ENTRY)

    curve = CumulativeRobustnessCurve(mu, sigma, tuple(methods), cfg.metric, cfg.radius, cfg.fingerprint())

    if cfg.metric is Metric.M2:
        r_star, r_star_se = 0.0, 0.0
    else:
        wrong = np.array([s.prediction != s.label for s in samples], dtype=np.float64)
        r_star = float(wrong.mean())
        r_star_se = math.sqrt(r_star * (1.0 - r_star) / cfg.N)

    results = []
    for t in cfg.t_values:
        r_t = curve.evaluate(t)
        results.append(
            {
                "t": t,
                "rho": cfg.rho,
                "R_t": r_t,
                "R_t_se": curve.standard_error(t),
                "thresholded_risk": 1.0 - r_t,
                "satisfied": criterion_satisfied(r_t, r_star, cfg.rho),
            }
        )

    budget = {
        "nominal_predictions": int(sum(s.nominal_passes for s in samples)),
        "perturbation_passes": int(sum(s.perturbation_passes for s in samples)),
        "amls_passes": int(sum(s.amls_passes for s in samples)),
        "instrumented_total": int(sum(s.forward_passes for s in samples)),
    }
    budget["total_forward_passes"] = budget["nominal_predictions"] + budget["perturbation_passes"] + budget["amls_passes"]
    report = CertificationReport(
        cfg,
        curve,
        samples,
        batch.nominals,
        reg,
        r_star,
        r_star_se,
        results,
        budget,
        calib,
    )
    report.runtime_s = time.perf_counter() - start
    return report
