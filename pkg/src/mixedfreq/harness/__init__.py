"""Experiment configuration, the (arm, seed) runner, summaries and the CLI."""

from .config import (ARMS, ConfigError, ExperimentConfig, config_from_dict, config_hash, config_to_dict,
                     load_config, reference_config)
from .experiment import ConfigMismatchError, run_experiment, run_job
from .summary import MissingRunsError, emit_summary, mean_ci

__all__ = ["ARMS", "ConfigError", "ConfigMismatchError", "ExperimentConfig", "MissingRunsError", "config_from_dict",
           "config_hash", "config_to_dict", "emit_summary", "load_config", "mean_ci", "reference_config",
           "run_experiment", "run_job"]
