"""Cross-modal silent speech recognition at desk scale.

A numpy-backed library covering the full pipeline: a minimal reverse-mode
autodiff engine, contrastive and CTC training objectives, latent-space
dynamic time warping, class-weighted bin-packing batch sampling, a toy
two-encoder/shared-decoder model, n-gram beam-search decoding, evaluation
metrics, LLM-based N-best rescoring, and a synthetic paired-modality
corpus with an experiment harness.
"""

from .autodiff import (
    GradientTape,
    Tensor,
    cosine_similarity,
    finite_difference_gradient,
    gelu,
    grad,
)
from .losses import (
    LatentBatch,
    LossConfig,
    LossWeights,
    combined_loss,
    crosscon,
    ctc_loss,
    pairwise_sim,
    suptcon,
)

__version__ = "0.1.0"
