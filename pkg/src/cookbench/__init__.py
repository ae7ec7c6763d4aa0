"""cookbench: dataset "cooking" with anti-adversarial perturbations, in numpy.

A raw image dataset is pushed towards a frozen surrogate's own predictions
under an SSIM budget. A third party that trains on the cooked copy gets a
model that works on cooked inputs but degrades on raw ones. The package
ships the pieces needed to measure that: tensors and a pinned RNG, a small
differentiable CNN, SSIM, the crafting loop, an SGD trainer, the four-cell
evaluation and an experiment pipeline with a CLI.
"""

from .cook import CraftConfig, Direction, Optimizer, TargetRule, craft_dataset, craft_example, random_noise_dataset
from .data import Dataset, Provenance, ProvenanceKind, SynthRecipe, load_dataset, save_dataset, synth_dataset
from .errors import (
    ConstraintError,
    CookError,
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
    UndefinedMetricError,
)
from .evalkit import EvalReport, accuracy, auc_binary, auc_multiclass, build_report, compute_cp_pp
from .nn import LossForm, LossSpec, ModelParams, ModelSpec, forward, init_params, small_cnn
from .ssim import SsimConfig, ssim, ssim_batch_min
from .tensor import Rng, derive_seed
from .trainer import TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "ConstraintError", "CookError", "CraftConfig", "Dataset", "Direction", "EvalReport", "FormatError",
    "LossForm", "LossSpec", "ModelParams", "ModelSpec", "NumericError", "Optimizer", "ParameterError",
    "Provenance", "ProvenanceKind", "Rng", "ShapeError", "SsimConfig", "SynthRecipe", "TargetRule",
    "TrainConfig", "UndefinedMetricError", "accuracy", "auc_binary", "auc_multiclass", "build_report",
    "compute_cp_pp", "craft_dataset", "craft_example", "derive_seed", "forward", "init_params",
    "load_dataset", "predict", "random_noise_dataset", "save_dataset", "small_cnn", "ssim",
    "ssim_batch_min", "synth_dataset", "train",
]  # fmt: skip
