"""Multiresolution convolutional restoration of moire-contaminated photos.

The package bundles four things: a small from-scratch tensor engine with
hand-derived backward passes, the multiresolution restoration network built on
it, the screen-photo registration pipeline used to build aligned training
pairs, and a synthetic moire generator for self-contained experiments.
"""

__version__ = "0.1.0"

from .engine import (
    AdamHyper,
    AdamState,
    ConvParams,
    Tensor4,
    adam_step,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    relu,
    relu_backward,
)
from .errors import (
    CleaningError,
    ConfigError,
    DataError,
    DegenerateGeometryError,
    DemoireError,
    DetectionError,
    NumericalError,
    ShapeError,
    SynthesisError,
    TrainingDivergedError,
)
from .metrics import mean_error, psnr, ssim
from .network import (
    Network,
    NetworkConfig,
    backward,
    build_network,
    forward,
    inspect_branches,
    load_checkpoint,
    param_count,
    restore_image,
    save_checkpoint,
    variant_config,
    with_parameters,
)
from .registration import (
    AlignResult,
    CornerSet,
    FrameSpec,
    align_pair,
    apply_homography,
    binarize,
    clean_corners,
    detect_corners,
    estimate_homography,
    frame_corners,
    synthesize_frame,
    verify_pair,
    warp,
    window_ratio,
)
from .synth import (
    MoireParams,
    contaminate,
    draw_moire_params,
    load_pairs,
    make_dataset,
    random_reference,
    simulate_capture,
)
from .training import TrainConfig, TrainResult, l2_patch_loss, train, validation_loss

__all__ = [
    "AdamHyper",
    "AdamState",
    "ConvParams",
    "Tensor4",
    "adam_step",
    "conv2d_backward",
    "conv2d_forward",
    "deconv2d_backward",
    "deconv2d_forward",
    "relu",
    "relu_backward",
    "CleaningError",
    "ConfigError",
    "DataError",
    "DegenerateGeometryError",
    "DemoireError",
    "DetectionError",
    "NumericalError",
    "ShapeError",
    "SynthesisError",
    "TrainingDivergedError",
    "mean_error",
    "psnr",
    "ssim",
    "Network",
    "NetworkConfig",
    "backward",
    "build_network",
    "forward",
    "inspect_branches",
    "load_checkpoint",
    "param_count",
    "restore_image",
    "save_checkpoint",
    "variant_config",
    "with_parameters",
    "AlignResult",
    "CornerSet",
    "FrameSpec",
    "align_pair",
    "apply_homography",
    "binarize",
    "clean_corners",
    "detect_corners",
    "estimate_homography",
    "frame_corners",
    "synthesize_frame",
    "verify_pair",
    "warp",
    "window_ratio",
    "MoireParams",
    "contaminate",
    "draw_moire_params",
    "load_pairs",
    "make_dataset",
    "random_reference",
    "simulate_capture",
    "TrainConfig",
    "TrainResult",
    "l2_patch_loss",
    "train",
    "validation_loss",
    "__version__",
]
