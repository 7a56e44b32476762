"""Velocity-prior regularization for simulation-free dynamic reconstruction."""

from .errors import (
    ConfigError,
    DivergenceError,
    SingularMatrixError,
    SingularSystemError,
    UnsupportedDimensionError,
)
from .experiment import ExperimentConfig, MetricsReport, SceneSpec, compare, run_experiment
from .flow import Scene, VelocityFieldSpec, integrate_flow, make_scene, trajectory_sample
from .losses import LossBreakdown, LossConfig, grad_total_loss, rematching_loss, total_loss
from .model import Observation, ReconModel, TimeBasis, eval_trajectories, eval_weights
from .priors import FieldSample, PartWeights, PriorClass, PriorTag, TrajectorySample, project
from .train import AdamRates, initialize, train

__version__ = "0.1.0"

__all__ = [
    "AdamRates",
    "ConfigError",
    "DivergenceError",
    "ExperimentConfig",
    "FieldSample",
    "LossBreakdown",
    "LossConfig",
    "MetricsReport",
    "Observation",
    "PartWeights",
    "PriorClass",
    "PriorTag",
    "ReconModel",
    "Scene",
    "SceneSpec",
    "SingularMatrixError",
    "SingularSystemError",
    "TimeBasis",
    "TrajectorySample",
    "UnsupportedDimensionError",
    "VelocityFieldSpec",
    "compare",
    "eval_trajectories",
    "eval_weights",
    "grad_total_loss",
    "initialize",
    "integrate_flow",
    "make_scene",
    "project",
    "rematching_loss",
    "run_experiment",
    "total_loss",
    "train",
    "trajectory_sample",
]
