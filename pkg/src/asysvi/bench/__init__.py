"""Experiment harness and command-line interface."""

from .config import ExperimentConfig, load_config, parse_config
from .cli import cmd_run, cmd_sweep, cmd_topics, cmd_gen, main, run_experiment

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "cmd_run",
    "cmd_sweep",
    "cmd_topics",
    "cmd_gen",
    "main",
    "run_experiment",
]
