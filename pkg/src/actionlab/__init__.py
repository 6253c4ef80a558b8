"""Workbench for studying how action representations shape PPO training.

Train PPO agents on closed-form continuous-control tasks under torque,
velocity, position, or ideal position control, then analyze why the runs
differ: 2-D optimization-surface slices around checkpoints and cosine
similarity of training gradients against large-sample oracle gradients.
"""

from .actuation import (
    ActionBounds,
    ActuationMode,
    ControlKind,
    ControllerGains,
    default_bounds,
    tune_gains,
)
from .data import Batch, Checkpoint, RunningStats, Trajectory
from .envs import EnvSpec, JointState, make_env
from .errors import ConfigError, NumericError, WorkbenchError
from .gradsim import GradQualityRecord, GradSimConfig, analyze_run, cosine_similarity
from .landscape import LandscapeConfig, LandscapeGrid, compute_grid, make_directions
from .policy import FlatParams, MlpSpec, PolicyValueModel
from .ppo import PpoConfig, RunSetup, Trainer, compute_gae, ppo_loss
from .report import PlotSpec, load_checkpoint, render_heatmap, render_learning_curves, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ActionBounds",
    "ActuationMode",
    "Batch",
    "Checkpoint",
    "ConfigError",
    "ControlKind",
    "ControllerGains",
    "EnvSpec",
    "FlatParams",
    "GradQualityRecord",
    "GradSimConfig",
    "JointState",
    "LandscapeConfig",
    "LandscapeGrid",
    "MlpSpec",
    "NumericError",
    "PlotSpec",
    "PolicyValueModel",
    "PpoConfig",
    "RunSetup",
    "RunningStats",
    "Trainer",
    "Trajectory",
    "WorkbenchError",
    "analyze_run",
    "compute_gae",
    "compute_grid",
    "cosine_similarity",
    "default_bounds",
    "load_checkpoint",
    "make_directions",
    "make_env",
    "ppo_loss",
    "render_heatmap",
    "render_learning_curves",
    "save_checkpoint",
    "tune_gains",
    "__version__",
]
