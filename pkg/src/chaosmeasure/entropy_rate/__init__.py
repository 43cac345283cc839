"""Entropy-rate estimators for symbol sequences and their finite-size extrapolation."""
from .estimators import (
    DEFAULT_CTW_DEPTH,
    ESTIMATORS,
    EntropyEstimate,
    Estimator,
    block_entropy_rate,
    ctw_entropy_rate,
    get_estimator,
    lz_cross_parse_rate,
)
from .protocol import (
    DEFAULT_DATASET,
    DEFAULT_LENGTHS,
    DEFAULT_REPEATS,
    WindowEstimate,
    estimate_h_inf,
    finite_size_protocol,
    log_lengths,
    summarize,
)
from .scaling import ScalingFit, ScalingFitError, ansatz, fit_scaling_ansatz

__all__ = [
    "DEFAULT_CTW_DEPTH",
    "ESTIMATORS",
    "EntropyEstimate",
    "Estimator",
    "block_entropy_rate",
    "ctw_entropy_rate",
    "get_estimator",
    "lz_cross_parse_rate",
    "DEFAULT_DATASET",
    "DEFAULT_LENGTHS",
    "DEFAULT_REPEATS",
    "WindowEstimate",
    "estimate_h_inf",
    "finite_size_protocol",
    "log_lengths",
    "summarize",
    "ScalingFit",
    "ScalingFitError",
    "ansatz",
    "fit_scaling_ansatz",
]
