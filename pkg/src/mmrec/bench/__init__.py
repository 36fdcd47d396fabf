"""Synthetic benchmark: dataset generation, experiments and reports."""

from .config import ConfigError, ExperimentConfig, load_config
from .dataset import SyntheticDatasetSpec, accuracy_bound, generate_dataset, load_manifest
from .experiment import evaluate, run_experiment, sweep_alpha, train_models
from .report import METHODS, ExperimentResult, parse_csv, render_csv, render_markdown, write_report

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "METHODS", "SyntheticDatasetSpec",
    "accuracy_bound", "evaluate", "generate_dataset", "load_config", "load_manifest", "parse_csv",
    "render_csv", "render_markdown", "run_experiment", "sweep_alpha", "train_models", "write_report",
]
