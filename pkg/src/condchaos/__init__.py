"""Numerical lab for conditional mean-field BSDEs driven by common noise."""

from .chaos_lab import (chaos_rate_experiment, coupling_error_experiment, fit_rate, lemma7_check,
                        moment_suite, theoretical_rate)
from .config import ExperimentConfig, parse_config
from .errors import (CondChaosError, ConfigError, InternalError, InvalidArgument, NonConvergence,
                     NumericError, ResourceError, UnsupportedModel)
from .limit_solver import MeasureFlow, solve_coupled_system, solve_limit_picard
from .measures import EmpiricalMeasure, coupling_upper_bound, wasserstein_2, wasserstein_p_1d
from .model import ModelSpec, make_model
from .particle_solver import solve_particle_system
from .paths import make_time_grid, sample_path_bundle
from .solution import BackwardSolution, SchemeConfig

__all__ = [
    "BackwardSolution", "CondChaosError", "ConfigError", "EmpiricalMeasure", "ExperimentConfig",
    "InternalError", "InvalidArgument", "MeasureFlow", "ModelSpec", "NonConvergence",
    "NumericError", "ResourceError", "SchemeConfig", "UnsupportedModel", "chaos_rate_experiment",
    "coupling_error_experiment", "coupling_upper_bound", "fit_rate", "lemma7_check",
    "make_model", "make_time_grid", "moment_suite", "parse_config", "sample_path_bundle",
    "solve_coupled_system", "solve_limit_picard", "solve_particle_system", "theoretical_rate",
    "wasserstein_2", "wasserstein_p_1d",
]
