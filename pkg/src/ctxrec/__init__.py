"""Context-aware recommendation with one-to-many cross-domain layer transfer.

Trains a four-part neural recommender (multiplicative context pooling,
domain-specific embeddings, context-conditioned towers, scoring with a
learned context bias) on a dense source domain, then moves its shared
layers to disjoint sparse target domains by direct copy, annealed
fine-tuning, or distributionally regularized residual adapters.
"""

__version__ = "0.1.0"

from . import checkpoint, core, data, evaluation, synth, training, transfer
from .model import ModelConfig, Recommender

__all__ = [
    "ModelConfig",
    "Recommender",
    "checkpoint",
    "core",
    "data",
    "evaluation",
    "synth",
    "training",
    "transfer",
    "__version__",
]
