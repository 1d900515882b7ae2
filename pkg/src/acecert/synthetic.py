"""Shipped synthetic setups: generators with analytic oracles and small classifiers for them."""
from __future__ import annotations

import numpy as np
from scipy.linalg import hadamard

from .distribution import (
    AffineStage,
    GaussianStage,
    GeneratorSpec,
    NearestTemplateOracle,
    UniformStage,
    sample_nominal,
)
from .model import Layer, MlpModel

# default perturbation radius for the template setup: below the ground-truth
# separation (1.0 at the templates) with room for the generator noise
DEFAULT_RADIUS = 0.5


def template_generator(
    dim: int = 64,
    scale: float = 8.0,
    num_classes: int = 3,
    style_dim: int = 4,
    style_std: float = 0.3,
    noise_std: float = 0.5,
) -> GeneratorSpec:
    """Hierarchical generator: latent style -> affine render around a class template -> pixel noise.

    Templates are scaled Hadamard rows (``dim`` a power of two), so they are
    mutually orthogonal with norm ``scale``; the ground truth is the nearest
    template.  Each template sits at l_inf distance ``scale / sqrt(dim)`` from
    the ground-truth boundary.
    """
    H = hadamard(dim).astype(np.float64)
    templates = scale * H[1 : num_classes + 1] / np.sqrt(dim)
    # fixed render matrix so the generator document is self-contained
    render = np.random.default_rng(20240601).standard_normal((dim, style_dim)) / np.sqrt(dim)
    classes = []
    for t in templates:
        classes.append(
            [
                GaussianStage(np.zeros(style_dim), np.full(style_dim, style_std)),
                AffineStage(render, t),
                GaussianStage(np.zeros(dim), np.full(dim, noise_std)),
            ]
        )
    # l_inf distance from a template to the nearest other-class boundary
    gap = np.abs(templates[0] - templates[1]).sum()
    separation = float(np.sum((templates[0] - templates[1]) ** 2) / (2 * gap))
    return GeneratorSpec(tuple(classes), NearestTemplateOracle(templates), separation)


def template_scores(templates: np.ndarray, X: np.ndarray, class_bias=None) -> np.ndarray:
    """Linear nearest-template scores ``t_c . x - |t_c|^2 / 2 + bias_c``."""
    s = X @ templates.T - 0.5 * np.sum(templates**2, axis=1)
    if class_bias is not None:
        s = s + np.asarray(class_bias)
    return s


def toy_mlp(
    gen: GeneratorSpec,
    hidden: int = 64,
    class_bias=(48.0, 0.0, 0.0),
    feature_scale: float = 0.05,
    fit_samples: int = 4000,
    seed: int = 7,
) -> MlpModel:
    """A tanh MLP distilled from a biased nearest-template scorer.

    The hidden layer is a fixed random tanh feature map kept in its near-linear
    range (small ``feature_scale``); the output layer is the least-squares fit to
    the biased template scores on generator samples.  ``class_bias`` favours class 0, which
    moves the model's decision boundary away from the ground truth so that some
    nominals of the other classes sit within reach of it.
    """
    rng = np.random.default_rng(seed)
    m = gen.output_dim
    templates = gen.oracle.templates
    batch = sample_nominal(gen, count=fit_samples, seed=seed)
    X = batch.nominals
    target = template_scores(templates, X, class_bias[: gen.class_count])

    W1 = feature_scale * rng.standard_normal((hidden, m))
    b1 = 0.1 * rng.standard_normal(hidden)
    F = np.tanh(X @ W1.T + b1)
    design = np.hstack([F, np.ones((F.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    W2 = coef[:-1].T
    b2 = coef[-1]
    return MlpModel((Layer(W1, b1, "tanh"), Layer(W2, b2, "identity")))


def interval_generator(lo: float = -1.0, hi: float = 1.0) -> GeneratorSpec:
    """1-D construction: nominals uniform on ``[lo, hi]``, ground-truth boundary at the midpoint.

    Class ``psi`` draws uniformly from its half of the interval, so sampling
    with ``ALL`` classes gives the uniform distribution on the whole interval.
    """
    mid = 0.5 * (lo + hi)
    quarter = 0.25 * (hi - lo)
    templates = np.array([[mid - quarter], [mid + quarter]])
    classes = ((UniformStage([lo], [mid]),), (UniformStage([mid], [hi]),))
    return GeneratorSpec(classes, NearestTemplateOracle(templates), 0.0)


def threshold_model(boundary: float = 0.0, slope: float = 1.0) -> MlpModel:
    """1-D two-class linear model: class 1 iff ``x > boundary`` (ties go to class 0)."""
    W = np.array([[-slope], [slope]])
    b = np.array([slope * boundary, -slope * boundary])
    return MlpModel((Layer(W, b, "identity"),))


def constant_model(input_dim: int, num_classes: int = 2, label: int = 0) -> MlpModel:
    """Always predicts ``label`` (zero weights, bias favouring one class)."""
    b = np.zeros(num_classes)
    b[label] = 1.0
    return MlpModel((Layer(np.zeros((num_classes, input_dim)), b, "identity"),))


def two_cluster_generator(separation: float = 5.0, std: float = 0.5) -> GeneratorSpec:
    means = np.array([[-separation, 0.0], [separation, 0.0]])
    classes = [(GaussianStage(mu, [std, std]),) for mu in means]
    return GeneratorSpec(tuple(classes), NearestTemplateOracle(means), float(separation - 0.0))
