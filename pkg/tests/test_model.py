import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acecert.errors import ConfigError, UnsupportedMetricError
from acecert.model import (
    CountingClassifier,
    Layer,
    Metric,
    MlpModel,
    forward,
    load_model,
    margin,
    margin_function,
    predict,
    save_model,
    score_margins,
)


def linear(W, b=None):
    W = np.asarray(W, dtype=float)
    return MlpModel((Layer(W, np.zeros(W.shape[0]) if b is None else b, "identity"),))


def random_mlp(seed=0, sizes=(2, 16, 3), act="relu"):
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(len(sizes) - 1):
        last = k == len(sizes) - 2
        layers.append(Layer(rng.standard_normal((sizes[k + 1], sizes[k])), rng.standard_normal(sizes[k + 1]), "identity" if last else act))
    return MlpModel(tuple(layers))


def test_identity_network():
    np.testing.assert_array_equal(forward(linear(np.eye(2)), [0.3, 0.7]), [0.3, 0.7])


def test_relu_then_identity():
    model = MlpModel((Layer(np.eye(2), [-1.0, -1.0], "relu"), Layer(np.eye(2), [0.0, 0.0])))
    np.testing.assert_array_equal(forward(model, [2.0, 0.5]), [1.0, 0.0])


def test_random_mlp_matches_reference_pass():
    model = random_mlp(3)
    rng = np.random.default_rng(3)
    W1, b1, W2, b2 = rng.standard_normal((16, 2)), rng.standard_normal(16), rng.standard_normal((3, 16)), rng.standard_normal(3)
    x = np.array([0.25, -1.5])
    hidden = [max(sum(W1[i, j] * x[j] for j in range(2)) + b1[i], 0.0) for i in range(16)]
    ref = [sum(W2[i, j] * hidden[j] for j in range(16)) + b2[i] for i in range(3)]
    np.testing.assert_allclose(forward(model, x), ref, rtol=1e-13, atol=1e-13)


def test_tanh_activation():
    model = MlpModel((Layer([[1.0]], [0.0], "tanh"), Layer([[1.0], [-1.0]], [0.0, 0.0])))
    np.testing.assert_allclose(forward(model, [0.5]), [np.tanh(0.5), -np.tanh(0.5)])


@pytest.mark.parametrize("scores,label", [((0.3, 0.7), 1), ((0.5, 0.5), 0), ((1.0, 0.0, 2.5), 2)])
def test_predict(scores, label):
    assert predict(linear(np.eye(len(scores)), np.array(scores)), np.zeros(len(scores))) == label


def test_dimension_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        forward(linear(np.eye(2)), [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        forward(linear(np.eye(2)), [np.nan, 0.0])


def test_layer_validation():
    with pytest.raises(ConfigError):
        MlpModel((Layer(np.eye(2), [0, 0], "relu"),))  # last layer must be identity
    with pytest.raises(ConfigError):
        MlpModel((Layer(np.ones((3, 2)), [0, 0, 0], "relu"), Layer(np.ones((2, 4)), [0, 0])))
    with pytest.raises(ConfigError):
        Layer(np.eye(2), [0, 0], "softplus")
    with pytest.raises(ConfigError):
        linear(np.ones((1, 2)))  # one class


def test_margin_examples():
    model = linear(np.eye(3))
    assert margin(model, [0, 0, 0], [2.0, 5.0, 1.0], "m1", oracle=lambda X: np.ones(len(X), int)) == -3.0
    assert score_margins(np.array([[4.0, 4.0]]), 0)[0] == 0.0


def test_m2_nominal_never_violates():
    model = random_mlp(1)
    x = np.array([0.4, -0.2])
    assert margin(model, x, x, Metric.M2) < 0


def test_metrics_without_oracle():
    model = linear(np.eye(2))
    with pytest.raises(UnsupportedMetricError):
        margin(model, [0, 0], [0, 0], "m1")
    with pytest.raises(UnsupportedMetricError):
        margin_function(model, [0, 0], "m0")
    with pytest.raises(ConfigError):
        Metric.parse("m3")


def test_m0_uses_label_of_perturbed_point():
    model = linear(np.eye(2))
    oracle = lambda X: (X[:, 0] > 0).astype(int)  # noqa: E731
    h = margin_function(model, [0.0, 0.0], "m0", oracle)
    # (1, 0): truth 1, h = 1 - 0.  (-1, 0): truth 0, h = 0 - (-1).  (0, 2): truth 0, h = 2 - 0.  (0.5, 2): truth 1, h = 0.5 - 2
    np.testing.assert_allclose(h(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.5, 2.0]])), [1.0, 1.0, 2.0, -1.5])


def test_reference_override():
    model = linear(np.eye(2))
    h = margin_function(model, [0.0, 1.0], "m2", reference=0)
    assert h(np.array([[0.0, 1.0]]))[0] == 1.0


def test_json_round_trip(tmp_path):
    model = random_mlp(2, (4, 8, 8, 3), "tanh")
    save_model(model, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json")
    x = np.linspace(-1, 1, 4)
    np.testing.assert_array_equal(forward(model, x), forward(again, x))
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["input_dim"] == 4 and doc["num_classes"] == 3


def test_bad_json_reports_position(tmp_path):
    (tmp_path / "m.json").write_text('{"layers": [\n  {"weights": [[1]]\n')
    with pytest.raises(ConfigError, match=r"m.json:\d+:\d+"):
        load_model(tmp_path / "m.json")


def test_inconsistent_document():
    doc = random_mlp(0).to_dict()
    doc["num_classes"] = 7
    with pytest.raises(ConfigError):
        MlpModel.from_dict(doc)


def test_counting_classifier():
    c = CountingClassifier(random_mlp(0))
    c.scores(np.zeros((5, 2)))
    predict(c, [0.0, 0.0])
    assert c.forward_passes == 6


def test_weights_are_read_only():
    model = random_mlp(0)
    with pytest.raises(ValueError):
        model.layers[0].weights[0, 0] = 1.0


vectors = arrays(np.float64, 3, elements=st.floats(-1e3, 1e3))


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(-1e3, 1e3), st.integers(0, 2))
def test_margin_translation_invariance(scores, c, ref):
    a = score_margins(scores[None, :], ref)[0]
    b = score_margins(scores[None, :] + c, ref)[0]
    assert abs(a - b) <= 1e-9 * (1 + np.max(np.abs(scores)) + abs(c))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 2, elements=st.floats(-3, 3)), arrays(np.float64, 2, elements=st.floats(-3, 3)), st.integers(0, 50))
def test_m2_sign_equivalence(x, xp, seed):
    model = random_mlp(seed)
    s = forward(model, xp)
    if np.sort(s)[-1] == np.sort(s)[-2]:
        return  # only strict argmax is covered
    assert (margin(model, x, xp, "m2") < 0) == (predict(model, xp) == predict(model, x))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-10, 10)))
def test_predict_total_and_lowest_tie(scores):
    n = scores.size
    label = predict(linear(np.eye(n), scores), np.zeros(n))
    assert 0 <= label < n
    assert label == int(np.flatnonzero(scores == scores.max())[0])


def test_forward_determinism():
    model = random_mlp(5)
    x = np.array([0.123, -4.5])
    assert forward(model, x).tobytes() == forward(model, x).tobytes()
