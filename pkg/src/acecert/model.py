"""Black-box classifiers, a small MLP inference engine, and the margin function.

A classifier is anything exposing ``scores(X)`` for a batch ``X`` of shape
``(k, input_dim)`` returning pre-softmax scores of shape ``(k, num_classes)``,
plus the two integer attributes ``input_dim`` and ``num_classes``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import ConfigError, UnsupportedMetricError

ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}

# A ground-truth oracle maps a batch (k, m) to integer labels (k,).
Oracle = Callable[[np.ndarray], np.ndarray]


class Classifier(Protocol):
    input_dim: int
    num_classes: int

    def scores(self, X: np.ndarray) -> np.ndarray: ...


class Metric(enum.Enum):
    """Local robustness metric: which reference class a perturbed point must keep."""

    M0 = "m0"  # f(x') = c(x')
    M1 = "m1"  # f(x') = c(x)
    M2 = "m2"  # f(x') = f(x)

    @classmethod
    def parse(cls, value: "str | Metric") -> "Metric":
        if isinstance(value, Metric):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown robustness metric {value!r}; expected m0, m1 or m2") from None


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ConfigError(f"layer weights must be 2-D, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ConfigError(f"bias length {b.shape[0]} does not match {w.shape[0]} weight rows")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MlpModel:
    """Fully connected network with float64 weights; the last layer emits raw scores."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ConfigError("an MLP needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].weights.shape[1] != layers[k - 1].weights.shape[0]:
                raise ConfigError(
                    f"layer {k} expects {layers[k].weights.shape[1]} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].weights.shape[0]}"
                )
        if layers[-1].activation != "identity":
            raise ConfigError("the output layer must use the identity activation")
        if layers[-1].weights.shape[0] < 2:
            raise ConfigError("a classifier needs at least two classes")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weights.shape[0]

    def scores(self, X: np.ndarray) -> np.ndarray:
        a = np.asarray(X, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise ConfigError(f"expected inputs of shape (k, {self.input_dim}), got {a.shape}")
        for layer in self.layers:
            a = ACTIVATIONS[layer.activation](a @ layer.weights.T + layer.bias)
        return a

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "layers": [
                {"weights": l.weights.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpModel":
        try:
            layers = [Layer(l["weights"], l["bias"], l.get("activation", "identity")) for l in doc["layers"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model document: {exc}") from exc
        model = cls(tuple(layers))
        if "input_dim" in doc and int(doc["input_dim"]) != model.input_dim:
            raise ConfigError(f"input_dim {doc['input_dim']} disagrees with first layer ({model.input_dim})")
        if "num_classes" in doc and int(doc["num_classes"]) != model.num_classes:
            raise ConfigError(f"num_classes {doc['num_classes']} disagrees with last layer ({model.num_classes})")
        return model


def load_model(path: "str | Path") -> MlpModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return MlpModel.from_dict(doc)


def save_model(model: MlpModel, path: "str | Path") -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


class CountingClassifier:
    """Wraps a classifier and counts forward passes (one per evaluated input row)."""

    def __init__(self, inner: Classifier):
        self.inner = inner
        self.input_dim = inner.input_dim
        self.num_classes = inner.num_classes
        self.forward_passes = 0

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        self.forward_passes += X.shape[0]
        return self.inner.scores(X)


def forward(model: Classifier, x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise ConfigError(f"expected an input vector of length {model.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("input contains non-finite entries")
    return model.scores(x[None, :])[0]


def predict_batch(model: Classifier, X: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(model.scores(X), axis=1)


def predict(model: Classifier, x: Sequence[float]) -> int:
    return int(np.argmax(forward(model, x)))


def score_margins(scores: np.ndarray, reference: "int | np.ndarray") -> np.ndarray:
    """``max_{j != i} y_j - y_i`` row-wise, ``i`` being the reference class."""
    scores = np.asarray(scores, dtype=np.float64)
    rows = np.arange(scores.shape[0])
    ref = np.broadcast_to(np.asarray(reference), (scores.shape[0],))
    own = scores[rows, ref]
    others = scores.copy()
    others[rows, ref] = -np.inf
    return others.max(axis=1) - own


def reference_class(model: Classifier, x_nominal, metric: Metric, oracle: Optional[Oracle] = None) -> Optional[int]:
    """Reference class fixed by the nominal point (None for M0, where it varies with x')."""
    metric = Metric.parse(metric)
    x_nominal = np.asarray(x_nominal, dtype=np.float64)
    if metric is Metric.M2:
        return predict(model, x_nominal)
    if oracle is None:
        raise UnsupportedMetricError(f"metric {metric.value} needs a ground-truth oracle")
    if metric is Metric.M1:
        return int(oracle(x_nominal[None, :])[0])
    return None


def margin_function(
    model: Classifier,
    x_nominal,
    metric: "Metric | str",
    oracle: Optional[Oracle] = None,
    reference: Optional[int] = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized margin ``h(x, ., m)`` over batches of perturbed points.

    ``reference`` skips recomputing the reference class when the caller
    already knows it (M1/M2 only).
    """
    metric = Metric.parse(metric)
    if metric is Metric.M0 and oracle is None:
        raise UnsupportedMetricError("metric m0 needs a ground-truth oracle")
    ref = reference if reference is not None and metric is not Metric.M0 else reference_class(model, x_nominal, metric, oracle)

    if metric is Metric.M0:

        def h(X: np.ndarray) -> np.ndarray:
            X = np.atleast_2d(X)
            return score_margins(model.scores(X), oracle(X))

    else:

        def h(X: np.ndarray) -> np.ndarray:
            return score_margins(model.scores(np.atleast_2d(X)), ref)

    return h


def margin(model: Classifier, x_nominal, x_perturbed, metric: "Metric | str", oracle: Optional[Oracle] = None) -> float:
    """Margin of a single perturbed point; the metric is violated iff the result is >= 0."""
    x_perturbed = np.asarray(x_perturbed, dtype=np.float64)
    return float(margin_function(model, x_nominal, metric, oracle)(x_perturbed[None, :])[0])
