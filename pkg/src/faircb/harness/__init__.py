"""Experiment configs, seeded replication runner, window scheduler and CLI."""

from .config import ConfigError, EnvironmentConfig, ExperimentConfig, load_config, parse_config
from .runner import RunResult, run_experiment, run_single, simulate
from .schedule import allocate_window

__all__ = [
    "ConfigError", "EnvironmentConfig", "ExperimentConfig", "load_config", "parse_config",
    "RunResult", "run_experiment", "run_single", "simulate", "allocate_window",
]
