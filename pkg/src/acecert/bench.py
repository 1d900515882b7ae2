"""Equal-budget comparison of naive Monte Carlo, AMLS alone, and ACE.

Each repetition spends (about) the same number of classifier forward passes on
every method and records the cumulative robustness ``R(t)`` at the requested
thresholds.  The table has one row per method with mean and SD across
repetitions.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngs
from .ace import CertificationConfig, run_certification
from .distribution import GeneratorSpec, PerturbationBall, sample_nominal
from .errors import ConfigError
from .local_risk import AMLSConfig, amls, naive_mc
from .model import Classifier, CountingClassifier, Metric, margin_function, predict

METHODS = ("naive_mc", "amls", "ace")


@dataclass(frozen=True)
class BenchConfig:
    ace: CertificationConfig
    methods: tuple = METHODS
    repetitions: int = 30
    naive_M: int = 100_000
    budget: Optional[int] = None  # forward passes per method and repetition; None = whatever ACE used
    t_values: tuple = (1e-2, 1e-6)

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown bench methods {bad}; choose from {list(METHODS)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.naive_M < 1:
            raise ConfigError("naive_M must be >= 1")
        if self.budget is None and "ace" not in self.methods:
            raise ConfigError("set an explicit budget when ace is not among the methods")
        for t in self.t_values:
            if not 0 < t <= 1:
                raise ConfigError(f"threshold t must lie in (0, 1], got {t}")


@dataclass
class BenchRun:
    method: str
    repetition: int
    N: int
    N0: Optional[int]
    forward_passes: int
    runtime_s: float
    values: dict  # t -> R(t), None when degenerate


@dataclass
class BenchResult:
    config: BenchConfig
    runs: list = field(default_factory=list)

    def rows(self, method: str) -> list:
        return [r for r in self.runs if r.method == method]

    def values(self, method: str, t: float) -> list:
        return [r.values[t] for r in self.rows(method)]

    def summary(self, method: str, t: float):
        """(mean, SD) of R(t) over repetitions; None entries when any run is degenerate."""
        v = self.values(method, t)
        if not v or any(x is None for x in v):
            return None, None
        v = np.asarray(v, dtype=np.float64)
        sd = float(v.std(ddof=1)) if v.size > 1 else None
        return float(v.mean()), sd

    def table_csv(self) -> str:
        ts = self.config.t_values
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["method", "N", "N0", "runtime_s", "forward_passes"]
        for t in ts:
            header += [f"mean_t={t:g}", f"sd_t={t:g}"]
        w.writerow(header)
        for m in self.config.methods:
            rows = self.rows(m)
            if not rows:
                continue
            Ns = [r.N for r in rows]
            N = Ns[0] if len(set(Ns)) == 1 else f"{np.mean(Ns):.1f}"
            N0 = rows[0].N0 if rows[0].N0 is not None else ""
            line = [
                m,
                N,
                N0,
                f"{np.mean([r.runtime_s for r in rows]):.3f}",
                int(round(np.mean([r.forward_passes for r in rows]))),
            ]
            for t in ts:
                mean, sd = self.summary(m, t)
                line += ["" if mean is None else f"{mean:.6g}", "" if sd is None else f"{sd:.6g}"]
            w.writerow(line)
        return buf.getvalue()


def _reference(model, oracle, x, metric):
    if metric is Metric.M2:
        return predict(model, x)
    if metric is Metric.M1:
        return int(oracle(x[None, :])[0])
    return None


def _per_nominal(model, gen, cfg: CertificationConfig, seed, budget, estimate):
    """Spend ``budget`` forward passes on one nominal after another; returns log-risks."""
    counted = CountingClassifier(model)
    logs = []
    i = 0
    while counted.forward_passes < budget:
        x = sample_nominal(gen, count=1, seed=seed, start=i).nominals[0]
        ref = _reference(counted, gen.oracle, x, cfg.metric)
        h = margin_function(counted, x, cfg.metric, gen.oracle, reference=ref)
        ball = PerturbationBall(x, cfg.radius, clip_lo=cfg.clip_lo, clip_hi=cfg.clip_hi)
        logs.append(estimate(h, ball, i))
        i += 1
    return np.array(logs), counted.forward_passes


def _step_curve(logs: np.ndarray, t: float) -> float:
    return float(np.mean(logs <= math.log(t)))


def run_bench(model: Classifier, gen: GeneratorSpec, cfg: BenchConfig, progress=None) -> BenchResult:
    result = BenchResult(cfg)
    base = cfg.ace
    for rep in range(cfg.repetitions):
        seed = int(rngs.stream(base.seed, rngs.BENCH, rep).integers(2**62))
        budget = cfg.budget
        if "ace" in cfg.methods:
            t0 = time.perf_counter()
            report = run_certification(model, gen, replace(base, seed=seed, t_values=tuple(cfg.t_values)))
            spent = report.budget["instrumented_total"]
            result.runs.append(
                BenchRun(
                    "ace", rep, base.N, base.N0, spent, time.perf_counter() - t0,
                    {t: report.curve.evaluate(t) for t in cfg.t_values},
                )
            )
            if budget is None:
                budget = spent
        if "amls" in cfg.methods:
            t0 = time.perf_counter()

            def splitting(h, ball, i):
                return amls(h, ball, base.amls, rngs.stream(seed, rngs.AMLS, i, 0)).log_risk

            logs, spent = _per_nominal(model, gen, base, seed, budget, splitting)
            result.runs.append(
                BenchRun(
                    "amls", rep, logs.size, None, spent, time.perf_counter() - t0,
                    {t: _step_curve(logs, t) for t in cfg.t_values},
                )
            )
        if "naive_mc" in cfg.methods:
            t0 = time.perf_counter()
            M = cfg.naive_M

            def monte_carlo(h, ball, i):
                return naive_mc(h, ball, M, rngs.stream(seed, rngs.BALL, i)).log_value

            # whole nominals only: each costs one prediction plus M perturbations
            n_fit = max(1, budget // (M + 1))
            logs, spent = _per_nominal(model, gen, base, seed, n_fit * (M + 1), monte_carlo)
            values = {}
            for t in cfg.t_values:
                # with t * M < 1 the only estimate <= t is exactly zero hits, so the
                # value merely counts samples that never hit; report no value
                values[t] = None if t * M < 1 else _step_curve(logs, t)
            result.runs.append(BenchRun("naive_mc", rep, logs.size, None, spent, time.perf_counter() - t0, values))
        if progress is not None:
            progress(rep)
    return result
