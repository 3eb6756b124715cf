"""Conformal predict-then-control: robust LQR synthesis over conformal uncertainty balls."""

from .conformal import (CalibrationResult, UncertaintyBall, calibrate, conformal_quantile, empirical_coverage,
                        make_region, score)
from .datagen import IdentifiedDataset, build_dataset, identify_dynamics, simulate_trajectory
from .predictor import PredictorConfig, predict, train_predictor
from .synthesis import (SynthesisConfig, cpc_synthesize, grad_C, grad_K, inner_max_C, lqr_cost,
                        margin_certificate, nominal_lqr, robust_synthesize, universal_stab_check)
from .systems import DynamicsPair, TaskSpec, design_system, get_task, sample_design

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult", "UncertaintyBall", "calibrate", "conformal_quantile", "empirical_coverage", "make_region",
    "score", "IdentifiedDataset", "build_dataset", "identify_dynamics", "simulate_trajectory", "PredictorConfig",
    "predict", "train_predictor", "SynthesisConfig", "cpc_synthesize", "grad_C", "grad_K", "inner_max_C",
    "lqr_cost", "margin_certificate", "nominal_lqr", "robust_synthesize", "universal_stab_check", "DynamicsPair",
    "TaskSpec", "design_system", "get_task", "sample_design",
]
