"""Instructor-facing experiment configuration and deterministic A/B assignment."""

from jelai.experiments.assignment import assign_condition, fnv1a64, stable_assignment_hash
from jelai.experiments.config import (
    AppConfig,
    ConfigError,
    Experiment,
    ExperimentCondition,
    GlobalDefaults,
    load_config,
)

__all__ = [
    "AppConfig",
    "ConfigError",
    "Experiment",
    "ExperimentCondition",
    "GlobalDefaults",
    "assign_condition",
    "fnv1a64",
    "load_config",
    "stable_assignment_hash",
]
