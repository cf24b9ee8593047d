"""Example statistics with their couplings and exact laws."""

from .registry import (COND_MODES, MODEL_NAMES, ConfigError, Experiment, ModelSpec,
                       build_experiment, size_bias_report, stein_coupling_report)

__all__ = [
    "COND_MODES", "MODEL_NAMES", "ConfigError", "Experiment", "ModelSpec",
    "build_experiment", "size_bias_report", "stein_coupling_report",
]
