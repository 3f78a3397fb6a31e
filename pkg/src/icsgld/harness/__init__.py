"""Configuration, experiment runs, reports and the command line."""

from .config import ExperimentConfig, load_config, preset, save_config, validate_config
from .report import compare, summarize
from .runner import ExperimentReport, run_experiment, run_trial, splitmix64, trial_seed

__all__ = ["ExperimentConfig", "ExperimentReport", "compare", "load_config", "preset", "run_experiment",
           "run_trial", "save_config", "splitmix64", "summarize", "trial_seed", "validate_config"]
