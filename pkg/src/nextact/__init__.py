"""Future-activity anticipation over precomputed frame-feature sequences.

Recursive sequence prediction with contrastive representation revision,
cosine reattention over the observed clip, GRU fusion, and multi-task
activity/action/object heads, built on a small reverse-mode autodiff core
with compiled kernels (pure-numpy fallback selected at import).
"""

from .backend import BACKEND
from .model import (
    PredictionResult,
    RolloutState,
    SrlParams,
    forward_loss,
    fuse_modalities_attention,
    fuse_modalities_late,
    rollout,
)

__all__ = [
    "BACKEND",
    "SrlParams",
    "RolloutState",
    "PredictionResult",
    "forward_loss",
    "rollout",
    "fuse_modalities_late",
    "fuse_modalities_attention",
]

__version__ = "0.1.0"
