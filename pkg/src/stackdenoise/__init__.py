"""Self-supervised multiplane image denoising.

Trains a small convolutional encoder-decoder to predict a plane of an image
stack from its neighboring planes (or from a second registered copy), with a
synthetic frequency-domain undersampling noise model, spectral
data-consistency post-processing, and a full evaluation protocol. Everything
numerical is implemented on NumPy plus an optional compiled convolution
backend; no deep-learning framework is involved.
"""

from .kernels import BACKEND, available_backends
from .kspace import NoiseRealization, NoiseSpec, combine_copies, corrupt, data_consistency
from .metrics import MetricConfig, MetricReport, evaluate_stack, nrmse, psnr, ssim
from .stack import (
    ImageStack,
    SampledExample,
    SamplerConfig,
    neighbor_similarity_report,
    reflect_index,
    sample_example,
    sampler_for_input_width,
)
from .trainer import TrainConfig, cosine_lr, train, validation_mse

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ImageStack",
    "MetricConfig",
    "MetricReport",
    "NoiseRealization",
    "NoiseSpec",
    "SampledExample",
    "SamplerConfig",
    "TrainConfig",
    "available_backends",
    "combine_copies",
    "corrupt",
    "cosine_lr",
    "data_consistency",
    "evaluate_stack",
    "neighbor_similarity_report",
    "nrmse",
    "psnr",
    "reflect_index",
    "sample_example",
    "sampler_for_input_width",
    "ssim",
    "train",
    "validation_mse",
    "__version__",
]
