"""Ordinary least squares on a single regressor, with prediction-interval spread."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, InsufficientDataError


@dataclass(frozen=True)
class RegressionModel:
    beta0: float
    beta1: float
    r_squared: float
    residual_std: float
    x_mean: float
    s_xx: float
    n_points: int

    def predict(self, x):
        return self.beta0 + self.beta1 * np.asarray(x, dtype=np.float64)

    def prediction_std(self, x):
        """``s * sqrt(1 + 1/n + (x - xbar)^2 / Sxx)``: spread of a new observation at ``x``."""
        x = np.asarray(x, dtype=np.float64)
        return self.residual_std * np.sqrt(1.0 + 1.0 / self.n_points + (x - self.x_mean) ** 2 / self.s_xx)

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "beta1": self.beta1,
            "r_squared": self.r_squared,
            "residual_std": self.residual_std,
            "x_mean": self.x_mean,
            "s_xx": self.s_xx,
            "n_points": self.n_points,
        }


def fit_log_regression(x, y) -> RegressionModel:
    """Fit ``y = beta0 + beta1 * x`` by least squares.

    Raises :class:`InsufficientDataError` for fewer than 3 points and
    :class:`CalibrationError` when ``x`` has no spread or values are not finite.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise CalibrationError("x and y must have the same length")
    n = x.size
    if n < 3:
        raise InsufficientDataError(f"regression needs at least 3 calibration points, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CalibrationError("calibration points must be finite")
    xbar, ybar = x.mean(), y.mean()
    dx = x - xbar
    s_xx = float(dx @ dx)
    if s_xx <= 0.0 or np.ptp(x) == 0.0:
        raise CalibrationError("calibration subset is uninformative: all regressor values are equal")
    beta1 = float(dx @ (y - ybar)) / s_xx
    beta0 = float(ybar - beta1 * xbar)
    resid = y - (beta0 + beta1 * x)
    sse = float(resid @ resid)
    sst = float((y - ybar) @ (y - ybar))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    s = math.sqrt(sse / (n - 2))
    return RegressionModel(beta0, beta1, r2, s, float(xbar), s_xx, n)
