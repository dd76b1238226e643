"""Graph Diffusion Network surrogate."""

from .embedding import sinusoidal_embedding
from .io import load_model, save_model
from .model import (
    PAPER_TRUNK,
    ConditionBlock,
    Denoiser,
    GdnConfig,
    GdnModel,
    GraphBatch,
    MessagePassing,
    default_aggregation,
    prepare,
)
from .sample import (
    SamplingError,
    ancestral_sample,
    rollout,
    sample_dynamic,
    sample_next_state,
    sample_next_states,
)
from .schedule import NoiseSchedule, cosine_beta, cosine_schedule, forward_noise
from .train import Optimizers, TrainConfig, TrainingError, diffusion_loss, train, train_step

__all__ = [
    "PAPER_TRUNK", "ConditionBlock", "Denoiser", "GdnConfig", "GdnModel", "GraphBatch",
    "MessagePassing", "NoiseSchedule", "Optimizers", "SamplingError", "TrainConfig",
    "TrainingError", "ancestral_sample", "cosine_beta", "cosine_schedule", "default_aggregation",
    "diffusion_loss", "forward_noise", "load_model", "prepare", "rollout", "sample_dynamic",
    "sample_next_state", "sample_next_states", "save_model", "sinusoidal_embedding", "train",
    "train_step",
]
