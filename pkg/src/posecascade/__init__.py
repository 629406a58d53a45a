"""Cascaded pose regression with pose-indexed features.

A cascade of linear stages refines a pose estimate by sampling the image
at pose-indexed locations.  Stages are first fit greedily by ridge least
squares, then the whole cascade is tuned end-to-end by backpropagating
the final pose error through every stage.  Includes a synthetic 2D
benchmark with known ground truth, binary model persistence, and a CLI.
"""

from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FormatError,
    NumericalError,
)
from .linalg import mat_vec, ridge_fit
from .image import (
    Image,
    gaussian_blur,
    grad_bilinear,
    load_pgm,
    sample_bilinear,
    save_pgm,
)
from .pose import (
    SCALE_FLOOR,
    PoseModel,
    default_norm_const,
    landmark_model,
    normalized_error,
    project_pose,
    similarity_model,
    warp_jacobian,
    warp_point,
)
from .features import FeatureSpec, default_spec, extract, jacobian, preblur
from .cascade import (
    CascadeModel,
    GradCheckResult,
    GreedyReport,
    Stage,
    TrainConfig,
    evaluate_errors,
    finetune_bp,
    forward,
    gradient_check,
    loss_and_grads,
    mean_train_loss,
    train_greedy,
)
from .data import (
    Dataset,
    Sample,
    SynthConfig,
    gen_synthetic,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionError", "DivergenceError", "FormatError",
    "NumericalError",
    "mat_vec", "ridge_fit",
    "Image", "sample_bilinear", "grad_bilinear", "gaussian_blur",
    "load_pgm", "save_pgm",
    "PoseModel", "SCALE_FLOOR", "similarity_model", "landmark_model",
    "warp_point", "warp_jacobian", "project_pose", "normalized_error",
    "default_norm_const",
    "FeatureSpec", "default_spec", "preblur", "extract", "jacobian",
    "Stage", "CascadeModel", "TrainConfig", "GreedyReport", "GradCheckResult",
    "forward", "loss_and_grads", "train_greedy", "finetune_bp",
    "mean_train_loss", "evaluate_errors", "gradient_check",
    "Sample", "Dataset", "SynthConfig", "gen_synthetic",
    "save_dataset", "load_dataset", "save_model", "load_model",
    "__version__",
]
