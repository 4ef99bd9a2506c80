"""Configured experiment pipelines, CSV output and the command-line interface."""

from .config import ExperimentConfig, build_config, load_config
from .pipelines import PIPELINES, RunResult

__all__ = ["ExperimentConfig", "build_config", "load_config", "PIPELINES", "RunResult"]
