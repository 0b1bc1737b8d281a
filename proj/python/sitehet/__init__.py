"""Cross-site heterogeneity estimators for multi-site randomized experiments."""

from ._core import (
    EstimationError,
    InputError,
    eb_variance,
    heterogeneity_ratio,
    negative_share,
    ridge,
    run,
)

__all__ = [
    "EstimationError",
    "InputError",
    "eb_variance",
    "heterogeneity_ratio",
    "negative_share",
    "ridge",
    "run",
]
