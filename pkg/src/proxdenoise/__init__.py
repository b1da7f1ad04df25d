"""Trainable image denoiser built from unrolled constrained gradient steps.

Each stage subtracts a learned estimate of the noise and projects the
result back onto an l2 ball around the noisy input whose radius tracks
the noise level, so one trained model serves a whole range of noise
levels.  The noise estimate is built either from plain convolutions
(local variant) or from convolutions combined across groups of similar
patches found by block matching (non-local variant).  Every gradient in
the package is hand-derived and verified against finite differences; see
proxdenoise.verify and the gradcheck CLI command.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import load_manifest, make_dataset, manifest_images
from .errors import EngineError
from .netpbm import read_image, write_image
from .network import (
    Architecture,
    NetworkParams,
    color_architecture,
    desk_architecture,
    grayscale_architecture,
    init_network,
    network_backward,
    network_forward,
    noise_estimate_trace,
    parameter_count,
    parameters,
)
from .training import (
    HIGH_NOISE_GRID,
    LOW_NOISE_GRID,
    Adam,
    TrainConfig,
    awgn,
    greedy_train,
    joint_train,
    psnr,
    psnr_loss,
    train_full,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "NetworkParams",
    "EngineError",
    "grayscale_architecture",
    "color_architecture",
    "desk_architecture",
    "init_network",
    "network_forward",
    "network_backward",
    "noise_estimate_trace",
    "parameters",
    "parameter_count",
    "TrainConfig",
    "Adam",
    "awgn",
    "psnr",
    "psnr_loss",
    "greedy_train",
    "joint_train",
    "train_full",
    "LOW_NOISE_GRID",
    "HIGH_NOISE_GRID",
    "read_image",
    "write_image",
    "save_checkpoint",
    "load_checkpoint",
    "make_dataset",
    "load_manifest",
    "manifest_images",
    "__version__",
]
