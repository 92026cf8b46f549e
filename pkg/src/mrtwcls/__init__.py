"""Causal excursion effects for micro-randomized trials."""

from .dataset import MrtDataset, Schema, derive_lag, load_csv, log_transform, write_csv
from .design import (
    Constant,
    EmpiricalArmMean,
    MatchDenominator,
    ModelSpec,
    build_design,
    numerator_prob,
)
from .estimator import FitResult, inference, wcls_fit
from .gee import GeeSpec, gee_fit
from .loess import LoessSpec, effect_over_time, loess_fit
from .montecarlo import EstimatorSpec, run_mc
from .simulate import SimScenario, generate

__version__ = "0.1.0"

__all__ = [
    "Constant", "EmpiricalArmMean", "EstimatorSpec", "FitResult", "GeeSpec", "LoessSpec",
    "MatchDenominator", "ModelSpec", "MrtDataset", "Schema", "SimScenario", "build_design",
    "derive_lag", "effect_over_time", "gee_fit", "generate", "inference", "load_csv", "loess_fit",
    "log_transform", "numerator_prob", "run_mc", "wcls_fit", "write_csv",
]
