"""Intrinsic image decomposition with per-pixel confidence.

A small convolutional regressor predicts log-albedo and log-shading
means plus log-variance maps for both outputs and for the reconstruction
constraint; a convex solver then finds the most likely decomposition
under the multiplicative image formation model, weighting each pixel by
the predicted confidences.
"""

from .tensor import DEFAULT_LOG_EPSILON, LogDomainImage, PlaneTensor, ewise, from_log, to_log
from .net import (HeadBundle, LayerSpec, NetState, StaleCacheError, adam_step,
                  backward, default_architecture, forward, init_net,
                  load_checkpoint, save_checkpoint)
from .losses import (HeadGradients, NllTerm, ShiftResult, constraint_nll,
                     euclidean_training_loss, gaussian_nll, laplace_nll,
                     optimal_shift, shift_backward, total_training_loss)
from .inference import (DecompositionResult, ImageProblem, PixelProblem,
                        alternating_decompose, brute_force_oracle,
                        decompose_problem, solve_global_color,
                        solve_pixel_hard, solve_pixel_soft)
from .metrics import MetricReport, dssim, lmse, score_images, si_mse
from .synthdata import Dataset, Scene, SceneSpec, generate, make_dataset
from .pipeline import (AblationConfig, AblationReport, TrainedModel,
                       TrainExample, decompose, default_ablation_configs,
                       evaluate_model, evaluate_truth_against_itself,
                       example_from_scene, linear_outputs, run_ablation, train)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_LOG_EPSILON", "LogDomainImage", "PlaneTensor", "ewise",
    "from_log", "to_log",
    "HeadBundle", "LayerSpec", "NetState", "StaleCacheError", "adam_step",
    "backward", "default_architecture", "forward", "init_net",
    "load_checkpoint", "save_checkpoint",
    "HeadGradients", "NllTerm", "ShiftResult", "constraint_nll",
    "euclidean_training_loss", "gaussian_nll", "laplace_nll",
    "optimal_shift", "shift_backward", "total_training_loss",
    "DecompositionResult", "ImageProblem", "PixelProblem",
    "alternating_decompose", "brute_force_oracle", "decompose_problem",
    "solve_global_color", "solve_pixel_hard", "solve_pixel_soft",
    "MetricReport", "dssim", "lmse", "score_images", "si_mse",
    "Dataset", "Scene", "SceneSpec", "generate", "make_dataset",
    "AblationConfig", "AblationReport", "TrainExample", "TrainedModel",
    "decompose", "default_ablation_configs", "evaluate_model",
    "evaluate_truth_against_itself", "example_from_scene",
    "linear_outputs", "run_ablation", "train",
    "__version__",
]
