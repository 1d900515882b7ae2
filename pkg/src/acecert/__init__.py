"""Statistical global robustness certification of black-box classifiers.

Local robustness risks are estimated by naive Monte Carlo, a normal-tail model
of the margin, or adaptive multi-level splitting (AMLS); the ACE pipeline
calibrates the cheap normal-tail estimates against AMLS on a subset of
nominals and assembles the cumulative robustness curve ``R(t)``.
"""
__version__ = "0.1.0"

from .ace import (
    CertificationConfig,
    CertificationReport,
    CumulativeRobustnessCurve,
    evaluate_curve,
    pac_sample_size,
    run_certification,
)
from .distribution import (
    ALL,
    AffineStage,
    ClampStage,
    GaussianStage,
    GeneratorSpec,
    NearestTemplateOracle,
    PerturbationBall,
    UniformStage,
    ground_truth,
    load_generator,
    sample_ball,
    sample_nominal,
    save_generator,
)
from .errors import AcecertError, CalibrationError, ConfigError, InsufficientDataError, UnsupportedMetricError
from .local_risk import (
    AMLSConfig,
    AMLSResult,
    LocalRiskEstimate,
    MarginStats,
    Termination,
    amls,
    local_amls,
    naive_mc_local_risk,
    param_est_local_risk,
    variance_estimator,
)
from .model import Layer, Metric, MlpModel, forward, load_model, margin, predict, save_model
from .regression import RegressionModel, fit_log_regression
from .risk import (
    RiskDecomposition,
    boundary_risk,
    classification_risk,
    decomposition_check,
    ground_truth_boundary_risk,
)
