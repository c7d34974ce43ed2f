"""Batch scenarios: configuration, synthetic sensors, pipelines and the CLI."""

from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .experiments import LengthMismatch, PipelineError, Report, compute_rmse, run_experiment
from .sensors import synthesize_sensors

__all__ = [
    "ConfigError",
    "LengthMismatch",
    "PipelineError",
    "Report",
    "ScenarioConfig",
    "compute_rmse",
    "load_config",
    "parse_config",
    "run_experiment",
    "synthesize_sensors",
]
