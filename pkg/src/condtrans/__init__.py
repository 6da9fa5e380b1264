"""Sparsifying transform learning with an explicit condition-number bound."""

__version__ = "0.1.0"

from .estimators import ConditionedTransform, OrthoTransform, PenaltyTransform  # noqa: E402
from .exceptions import DimensionError, InfeasibleProjectionError, NumericalError  # noqa: E402

__all__ = [
    "ConditionedTransform",
    "PenaltyTransform",
    "OrthoTransform",
    "DimensionError",
    "NumericalError",
    "InfeasibleProjectionError",
    "__version__",
]
