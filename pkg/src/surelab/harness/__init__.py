"""Experiment orchestration: configuration, training runs, evaluation, grids and reports."""

from .config import ConfigError, ExperimentConfig, PRESETS, validate
from .evaluation import run_eval
from .training import RunManifest, TrainResult, TrainingDiverged, run_experiment, run_training

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PRESETS",
    "RunManifest",
    "TrainResult",
    "TrainingDiverged",
    "run_eval",
    "run_experiment",
    "run_training",
    "validate",
]
