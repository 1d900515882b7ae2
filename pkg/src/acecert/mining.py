"""Counterexample mining from the final AMLS particles."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import rng as rngs
from .distribution import GeneratorSpec, PerturbationBall
from .local_risk import AMLSConfig, amls
from .model import Classifier, Metric, margin_function, predict, predict_batch


@dataclass
class CounterexampleRecord:
    nominal_index: int
    nominal: list
    perturbed: list
    nominal_prediction: int
    perturbed_prediction: int
    nominal_label: Optional[int]
    perturbed_label: Optional[int]
    margin: float
    log_risk: float
    metric: str
    radius: float
    extreme: str = ""  # "least_p" / "greatest_p" for the nominals at either end of the ranking

    @property
    def risk(self) -> float:
        return math.exp(self.log_risk)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "CounterexampleRecord":
        return cls(**json.loads(line))


def dedupe(X: np.ndarray, scores: np.ndarray, merge_radius: float) -> np.ndarray:
    """Indices of a subset where no two points are within ``merge_radius`` (l_inf).

    Points are visited by decreasing ``scores``, so each cluster keeps its best member.
    """
    keep = []
    for j in np.argsort(-scores, kind="stable"):
        if all(np.max(np.abs(X[j] - X[k])) > merge_radius for k in keep):
            keep.append(j)
    return np.array(keep, dtype=np.int64)


def spread_out(X: np.ndarray, k: int) -> np.ndarray:
    """Greedy farthest-point choice of ``k`` rows, starting from row 0."""
    if X.shape[0] <= k:
        return np.arange(X.shape[0])
    chosen = [0]
    dist = np.max(np.abs(X - X[0]), axis=1)
    while len(chosen) < k:
        j = int(np.argmax(dist))
        chosen.append(j)
        dist = np.minimum(dist, np.max(np.abs(X - X[j]), axis=1))
    return np.array(chosen)


def collect(
    model: Classifier,
    gen: GeneratorSpec,
    nominals: np.ndarray,
    results: dict,
    metric: "Metric | str",
    radius: float,
    per_nominal: int = 5,
    merge_radius: float = 0.0,
    extremes_only: bool = False,
) -> list:
    """Turn AMLS results (``{nominal index: AMLSResult}``) into ranked, re-verified records."""
    metric = Metric.parse(metric)
    oracle = gen.oracle
    by_nominal = {}
    for i, res in sorted(results.items()):
        if res is None or len(res.counterexamples) == 0:
            continue
        X, H = res.counterexamples, res.counterexample_margins
        idx = dedupe(X, H, merge_radius)
        idx = idx[spread_out(X[idx], per_nominal)]
        by_nominal[i] = (res.log_risk, X[idx])
    if not by_nominal:
        return []

    ranked = sorted(by_nominal, key=lambda i: (by_nominal[i][0], i))
    least, greatest = ranked[0], ranked[-1]
    if extremes_only:
        ranked = [least] if least == greatest else [least, greatest]

    records = []
    for i in ranked:
        log_risk, X = by_nominal[i]
        x = nominals[i]
        # re-verify from the stored vectors
        h = margin_function(model, x, metric, oracle)(X)
        inside = np.max(np.abs(X - x), axis=1) <= radius
        ok = (h >= 0) & inside
        X, h = X[ok], h[ok]
        if X.shape[0] == 0:
            continue
        preds = predict_batch(model, X)
        truth = oracle(X) if oracle is not None else [None] * X.shape[0]
        x_label = int(oracle(x[None, :])[0]) if oracle is not None else None
        tag = "least_p" if i == least else "greatest_p" if i == greatest else ""
        for row in range(X.shape[0]):
            records.append(
                CounterexampleRecord(
                    nominal_index=int(i),
                    nominal=x.tolist(),
                    perturbed=X[row].tolist(),
                    nominal_prediction=predict(model, x),
                    perturbed_prediction=int(preds[row]),
                    nominal_label=x_label,
                    perturbed_label=None if truth[row] is None else int(truth[row]),
                    margin=float(h[row]),
                    log_risk=float(log_risk),
                    metric=metric.value,
                    radius=float(radius),
                    extreme=tag,
                )
            )
    return records


def mine_from_report(model: Classifier, gen: GeneratorSpec, report, **kw) -> list:
    """Records from the calibration-subset AMLS runs of a finished certification."""
    cfg = report.config
    return collect(model, gen, report.nominals, report.amls_results, cfg.metric, cfg.radius, **kw)


def run_amls_batch(
    model: Classifier,
    gen: GeneratorSpec,
    nominals: np.ndarray,
    radius: float,
    metric: "Metric | str",
    cfg: AMLSConfig,
    seed: int,
    clip_lo: Optional[float] = None,
    clip_hi: Optional[float] = None,
) -> dict:
    """AMLS on every nominal, on the same streams the certification pipeline uses."""
    metric = Metric.parse(metric)
    out = {}
    for i, x in enumerate(nominals):
        h = margin_function(model, x, metric, gen.oracle)
        out[i] = amls(h, PerturbationBall(x, radius, clip_lo=clip_lo, clip_hi=clip_hi), cfg, rngs.stream(seed, rngs.AMLS, i, 0))
    return out


def write_records(records: Iterable[CounterexampleRecord], path: "str | Path") -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


def read_records(path: "str | Path") -> list:
    with open(path) as fh:
        return [CounterexampleRecord.from_json(line) for line in fh if line.strip()]
