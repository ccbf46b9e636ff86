"""Restorer-guided diffusion posterior sampling for inverse problems."""

from .errors import (
    ConfigError,
    InvalidArgumentError,
    NumericError,
    SingularityError,
    TrainingDivergenceError,
    TrialFailure,
)
from .schedule import NoiseSchedule, linear_beta_schedule
from .guidance import GuidanceParams
from .samplers import NullspaceConfig, SamplerConfig, sample, sample_nullspace
from .harness import ExperimentConfig, MetricsReport, run_ablation, run_experiment

__version__ = "0.1.0"
