"""fxsr: flexible super-resolution with a runtime style control.

One trained generator covers a continuum of restoration styles: a scalar
(or per-pixel map) control in [0, 1] picks the operating point at inference
time, from faithful reconstruction to perceptually sharpened output.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    FxsrError,
    NumericalError,
    ShapeError,
)
from .schedules import (
    FeatureLevel,
    LossCoefficients,
    LossConstants,
    ScheduleVariant,
    WeightSet,
    default_constants,
    lambda_coeffs,
    weights_at,
)

__all__ = [
    "__version__",
    "FxsrError",
    "DomainError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "CheckpointError",
    "FeatureLevel",
    "ScheduleVariant",
    "WeightSet",
    "LossConstants",
    "LossCoefficients",
    "weights_at",
    "lambda_coeffs",
    "default_constants",
]
