"""Deformable-object manipulation control toolkit.

Quasi-static mass-spring simulation, depth-camera rendering, visual
feature extraction, and three learned feedback controllers (sparse-coded
dictionary, fixed-budget online GP, imitation-trained random forest),
wired together by a deterministic benchmark harness.
"""

from .backend import using_numba
from .episode import (EpisodeLog, RunConfig, build_demo_dictionary,
                      demo_trajectory, read_outputs, run_episode, task_spec,
                      write_outputs)
from .equilibrium import energy, solve_equilibrium
from .features import FeatureVector, extract, how_features
from .fogpr import GpHyperParams, GpModel, control_action, load_gp, predict, \
    save_gp, update
from .forest import (ForestParams, RandomForestController, build_forest,
                     load_forest, meanshift_labels, save_forest)
from .imitation import ClothIlEnv, expert_policy, il_train, il_train_multitask
from .linear_baseline import AdaptiveLinear, linear_baseline_step
from .mesh import DeformableMesh, GraspCommand, load_mesh, make_task_mesh, \
    save_mesh
from .render import CameraSpec, Observation, render, save_pgm
from .servo_dict import (GoalSet, TrajectoryLog, VisualFeedbackDictionary,
                         build_dictionary, load_dictionary, sample_velocity_pairs,
                         save_dictionary, servo_step, sparse_code)
from .sweep import report, sweep, update_timing

__version__ = "0.1.0"

__all__ = [
    "AdaptiveLinear", "build_demo_dictionary", "build_dictionary",
    "build_forest", "CameraSpec", "ClothIlEnv", "control_action",
    "DeformableMesh", "demo_trajectory", "energy", "EpisodeLog",
    "expert_policy", "extract", "FeatureVector", "ForestParams",
    "GoalSet", "GpHyperParams", "GpModel", "GraspCommand", "how_features",
    "il_train", "il_train_multitask", "linear_baseline_step",
    "load_dictionary", "load_forest", "load_gp", "load_mesh",
    "make_task_mesh", "meanshift_labels", "Observation", "predict",
    "RandomForestController", "read_outputs", "render", "report",
    "run_episode", "RunConfig", "sample_velocity_pairs", "save_dictionary",
    "save_forest", "save_gp", "save_mesh", "save_pgm", "servo_step",
    "solve_equilibrium", "sparse_code", "sweep", "task_spec",
    "TrajectoryLog", "update", "update_timing", "using_numba",
    "VisualFeedbackDictionary", "write_outputs",
]
