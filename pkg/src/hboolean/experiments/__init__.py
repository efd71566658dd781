"""Configured Monte Carlo experiments and their command line."""
from .config import ExperimentConfig, ExperimentKind, load_config
from .runner import (HEADER, RunResult, run_experiment, run_scaling, run_slice_scaling,
                     run_threshold_sweep)

__all__ = ["ExperimentConfig", "ExperimentKind", "HEADER", "RunResult", "load_config", "run_experiment",
           "run_scaling", "run_slice_scaling", "run_threshold_sweep"]
