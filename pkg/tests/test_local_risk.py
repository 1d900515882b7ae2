import io
import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri
from scipy.stats import norm

from acecert import rng as rngs
from acecert.distribution import PerturbationBall, sample_ball
from acecert.errors import ConfigError, InsufficientDataError
from acecert.local_risk import (
    AMLSConfig,
    LocalRiskEstimate,
    MarginStats,
    Method,
    Termination,
    amls,
    local_amls,
    log_normal_tail,
    log_param_tail,
    naive_mc,
    naive_mc_local_risk,
    param_est_local_risk,
    reflect_into_box,
    variance_estimator,
)
from acecert.model import Layer, MlpModel
from acecert.regression import fit_log_regression
from acecert.synthetic import constant_model

mpmath.mp.dps = 40
UNIT = PerturbationBall(np.zeros(1), 1.0)


def mp_log_tail(k):
    return float(mpmath.log(mpmath.erfc(mpmath.mpf(k) / mpmath.sqrt(2)) / 2))


# --- naive Monte Carlo ---------------------------------------------------------


def test_naive_constant_classifier():
    est = naive_mc_local_risk(constant_model(2), np.zeros(2), PerturbationBall(np.zeros(2), 1.0), "m2", 1000, rngs.stream(0, 1))
    assert est.value == 0.0 and est.method is Method.NAIVE_MC


def test_naive_half_ball():
    # scores (x1, -x1): class 0 at the center by tie-break, violation iff x1' >= 0
    model = MlpModel((Layer([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]),))
    est = naive_mc_local_risk(model, np.zeros(2), PerturbationBall(np.zeros(2), 1.0), "m2", 10_000, rngs.stream(1, 1))
    assert abs(est.value - 0.5) <= 3 * est.std_error
    assert est.std_error == pytest.approx(math.sqrt(est.value * (1 - est.value) / 10_000))


def test_naive_deep_interior():
    est = naive_mc(lambda X: X[:, 0] - 5.0, UNIT, 10_000, rngs.stream(2, 1))
    assert est.value == 0.0 and est.log_value == -math.inf


def test_naive_chunking_matches_single_draw():
    h = lambda X: X[:, 0] - 0.9  # noqa: E731
    est = naive_mc(h, UNIT, 40_000, rngs.stream(3, 1))
    X = sample_ball(UNIT, 40_000, rngs.stream(3, 1))
    assert est.value == np.mean(h(X) >= 0)


# --- parameter estimation ---------------------------------------------------------


def test_param_est_symmetric():
    assert param_est_local_risk(MarginStats(0.0, 1.0, 10)).value == 0.5


def test_param_est_three_sigma():
    exact = float(mpmath.erfc(3 / mpmath.sqrt(2)) / 2)
    assert param_est_local_risk(MarginStats(-3.0, 1.0, 10)).value == pytest.approx(exact, abs=1e-15)
    assert exact == pytest.approx(1.3499e-3, rel=1e-4)


def test_param_est_extreme_tail_is_finite():
    est = param_est_local_risk(MarginStats(-40.0, 1.0, 10))
    asym = -800 - math.log(40 * math.sqrt(2 * math.pi))
    assert math.isfinite(est.log_value)
    assert est.log_value == pytest.approx(-804.6, abs=0.05)
    assert est.log_value == pytest.approx(asym, rel=1e-3)
    assert est.log_value == pytest.approx(mp_log_tail(40.0), rel=1e-9)


def test_param_est_point_mass():
    assert param_est_local_risk(MarginStats(-1.0, 0.0, 10)).value == 0.0
    assert param_est_local_risk(MarginStats(0.0, 0.0, 10)).value == 1.0
    np.testing.assert_array_equal(log_param_tail([-1.0, 2.0], [0.0, 0.0]), [-math.inf, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.floats(-38.0, 38.0))
def test_log_tail_against_mpmath(k):
    assert log_normal_tail(k) == pytest.approx(mp_log_tail(k), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("k", [-5.0, 0.0, 8.0, 20.0, 37.5, 200.0, 1e4])
def test_log_tail_grid(k):
    assert log_normal_tail(k) == pytest.approx(mp_log_tail(k), rel=1e-12)


def test_log_tail_is_monotone():
    k = np.linspace(-10, 60, 2001)
    assert np.all(np.diff(log_normal_tail(k)) < 0)


def test_prop1_with_normal_margins():
    mu, sigma, M = -2.0, 0.8, 20_000
    h = lambda X: mu + sigma * ndtri((X[:, 0] + 1) / 2)  # noqa: E731  exact N(mu, sigma^2) margins
    z = h(sample_ball(UNIT, M, rngs.stream(4, 1)))
    est = param_est_local_risk(MarginStats.from_margins(z))
    k = -mu / sigma
    sd_k = math.sqrt(1 / M + k * k / (2 * M))
    assert abs(est.value - norm.sf(k)) <= 4 * norm.pdf(k) * sd_k
    exact = param_est_local_risk(MarginStats(mu, sigma, M)).value
    assert abs(exact - float(mpmath.erfc(mpmath.mpf(k) / mpmath.sqrt(2)) / 2)) <= 1e-9


def test_margin_stats():
    s = MarginStats.from_margins([1.0, -1.0, 0.0], keep=True)
    assert s.mean == 0.0 and s.std == 1.0 and s.count == 3
    assert s.violation_fraction == pytest.approx(2 / 3)
    with pytest.raises(InsufficientDataError):
        MarginStats.from_margins([1.0])


def test_estimate_range():
    with pytest.raises(ValueError):
        LocalRiskEstimate(1.5, Method.AMLS)


# --- AMLS --------------------------------------------------------------------------


def test_amls_config_validation():
    for bad in (dict(quantile=0.0), dict(quantile=1.0), dict(particles=5), dict(max_levels=0), dict(mh_updates=0)):
        with pytest.raises(ConfigError):
            AMLSConfig(**bad)


@pytest.mark.parametrize("d", [2, 8])
def test_amls_deep_interior_is_censored(d):
    res = amls(lambda X: X.mean(axis=1) - 3.0, PerturbationBall(np.zeros(d), 1.0), AMLSConfig(), rngs.stream(5, 2))
    assert res.terminated is Termination.MAX_LEVELS and res.censored
    assert res.log_risk <= 20 * math.log(0.1) + 1e-9
    assert len(res.counterexamples) == 0


def test_amls_unreachable_event():
    # levels pile up under the unreachable supremum: either the level budget runs out or splitting stalls
    res = amls(lambda X: X[:, 0] - 3.0, UNIT, AMLSConfig(), rngs.stream(5, 2))
    assert res.terminated in (Termination.MAX_LEVELS, Termination.STUCK)
    assert res.log_risk <= 20 * math.log(0.1) + 1e-9
    assert len(res.counterexamples) == 0


def test_amls_invariants():
    res = amls(lambda X: X[:, 0] - 0.99, UNIT, AMLSConfig(), rngs.stream(6, 2))
    assert res.terminated is Termination.REACHED_ZERO
    assert res.log_risk <= 0
    assert len(res.counterexamples) > 0 and np.all(res.counterexample_margins >= 0)
    assert np.all(np.abs(res.counterexamples) <= 1.0)
    lv = np.array(res.levels)
    assert np.all(np.diff(lv) > 0) and lv[-1] <= 0


def test_amls_easy_event_needs_no_splitting():
    res = amls(lambda X: X[:, 0], UNIT, AMLSConfig(), rngs.stream(7, 2))
    assert res.terminated is Termination.REACHED_ZERO and len(res.levels) == 1
    assert res.forward_passes == 200


def test_amls_stuck_on_constant_margin():
    res = amls(lambda X: np.full(len(X), -1.0), UNIT, AMLSConfig(), rngs.stream(8, 2))
    assert res.terminated is Termination.STUCK and res.log_risk == -math.inf


def test_amls_is_deterministic():
    h = lambda X: X[:, 0] - 0.999  # noqa: E731
    a = amls(h, UNIT, AMLSConfig(), rngs.stream(9, 2))
    b = amls(h, UNIT, AMLSConfig(), rngs.stream(9, 2))
    assert a.log_risk == b.log_risk and a.counterexamples.tobytes() == b.counterexamples.tobytes()


def test_amls_forward_pass_count():
    calls = []

    def h(X):
        calls.append(len(X))
        return X[:, 0] - 0.999

    res = amls(h, UNIT, AMLSConfig(), rngs.stream(10, 2))
    assert res.forward_passes == sum(calls)


def test_amls_diagnostics():
    res = amls(lambda X: X[:, 0] - 0.999, UNIT, AMLSConfig(), rngs.stream(11, 2))
    buf = io.StringIO()
    res.write_diagnostics(buf)
    rows = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert len(rows) == len(res.levels)
    assert set(rows[0]) == {"level", "survival_fraction", "acceptance_rate", "proposal_width"}


def test_amls_high_dimensional_box():
    # 8-D: violation iff every coordinate >= 0.5; p = 0.25^8
    h = lambda X: np.min(X, axis=1) - 0.5  # noqa: E731
    ball = PerturbationBall(np.zeros(8), 1.0)
    est = [amls(h, ball, AMLSConfig(), rngs.stream(12, 2, k)).risk for k in range(20)]
    assert np.mean(est) == pytest.approx(0.25**8, rel=0.35)


def test_local_amls_on_model():
    model = MlpModel((Layer([[1.0], [-1.0]], [-0.999, 0.999]),))  # class 0 iff x >= 0.999
    res = local_amls(model, np.zeros(1), UNIT, "m2", AMLSConfig(), rngs.stream(13, 2))
    # nominal predicts class 1; violation iff x' >= 0.999
    assert np.all(res.counterexamples[:, 0] >= 0.999)


def test_variance_reduction_at_equal_budget():
    c = 1 - 2e-4  # p = 1e-4
    h = lambda X: X[:, 0] - c  # noqa: E731
    runs = [amls(h, UNIT, AMLSConfig(), rngs.stream(14, 2, k)) for k in range(40)]
    budget = int(np.mean([r.forward_passes for r in runs]))
    naive = [naive_mc(h, UNIT, budget, rngs.stream(14, 1, k)).value for k in range(40)]
    assert np.std([r.risk for r in runs]) < np.std(naive)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6))
def test_reflection_stays_in_box(vals):
    Y = np.array(vals)[None, :]
    lo, hi = np.full(Y.shape[1], -1.0), np.full(Y.shape[1], 2.0)
    Z = reflect_into_box(Y, lo, hi)
    assert np.all(Z >= lo - 1e-12) and np.all(Z <= hi + 1e-12)
    inside = (Y >= lo) & (Y <= hi)
    np.testing.assert_allclose(Z[inside], Y[inside], rtol=1e-12, atol=1e-12)


# --- variance estimator -------------------------------------------------------------


def test_variance_zero_residual():
    reg = fit_log_regression([0, 1, 2, 3], [1, 3, 5, 7])
    assert variance_estimator(reg, x=10.0) == 0.0


def test_variance_prediction_interval_at_mean():
    vals = []
    for s in range(200):
        rng = rngs.stream(s, 4)
        x = np.linspace(0, 1, 10)
        reg = fit_log_regression(x, 2 * x + 0.1 * rng.standard_normal(10))
        vals.append(variance_estimator(reg, x=float(x.mean())))
    target = 0.1 * math.sqrt(1 + 1 / 10)
    rel = np.abs(np.array(vals) - target) / target
    assert np.mean(rel < 0.5) >= 0.9
    assert abs(np.mean(vals) - target) / target < 0.1


def test_variance_replicates():
    reps = [-10.0, -11.0, -9.5, -10.2, -10.8]
    assert variance_estimator(replicates=reps) == pytest.approx(np.std(reps, ddof=1))


def test_variance_needs_data():
    with pytest.raises(InsufficientDataError):
        variance_estimator()
    with pytest.raises(InsufficientDataError):
        variance_estimator(replicates=[-1.0])
