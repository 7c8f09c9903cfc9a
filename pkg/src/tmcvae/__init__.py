"""Multi-view VAE auditory attention decoding with task-related
contrastive representation learning."""

from .autodiff import Adam, Tensor, ancestors, conv2d, conv_transpose2d, elementwise
from .estimator import AttentionDecoder
from .fusion import (
    DiagonalGaussian,
    MixturePosterior,
    ViewSubset,
    enumerate_subsets,
    fuse,
    kl_standard_normal,
    mixture_kl_bound,
    product_of_experts,
    sample,
)
from .losses import (
    ContrastiveBatch,
    LossBreakdown,
    bce,
    cosine_similarity,
    elbo,
    recon_log_likelihood,
    tmc_loss,
    total_loss,
)
from .model import ModelConfig, MultiViewBatch, MultiViewVAE, paper_arch_config
from .synth import SynthConfig, SynthDataset, generate, split

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AttentionDecoder",
    "ContrastiveBatch",
    "DiagonalGaussian",
    "LossBreakdown",
    "MixturePosterior",
    "ModelConfig",
    "MultiViewBatch",
    "MultiViewVAE",
    "SynthConfig",
    "SynthDataset",
    "Tensor",
    "ViewSubset",
    "ancestors",
    "bce",
    "conv2d",
    "conv_transpose2d",
    "cosine_similarity",
    "elbo",
    "elementwise",
    "enumerate_subsets",
    "fuse",
    "generate",
    "kl_standard_normal",
    "mixture_kl_bound",
    "paper_arch_config",
    "product_of_experts",
    "recon_log_likelihood",
    "sample",
    "split",
    "tmc_loss",
    "total_loss",
]
