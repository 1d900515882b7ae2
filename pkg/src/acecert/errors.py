class AcecertError(Exception):
    """Base class for all errors raised by acecert."""


class ConfigError(AcecertError, ValueError):
    """Invalid configuration, file contents, or argument shapes."""


class UnsupportedMetricError(AcecertError):
    """A robustness metric was requested that the available oracle cannot support."""


class CalibrationError(AcecertError):
    """The AMLS calibration subset cannot support the log-log regression."""


class InsufficientDataError(CalibrationError):
    """Too few points to estimate a residual variance."""
