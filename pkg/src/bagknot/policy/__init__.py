"""Keypoint-conditioned diffusion policy."""
from .model import DiffusionPolicy, ObservationEmbedding, PolicyConfig, PolicyWeights, embed_observation, predict_noise
from .rollout import EpisodeRecord, EpisodeSpec, ExpertReplayActor, PolicyActor, rollout, rollout_batch
from .schedule import DiffusionSchedule, add_noise, make_schedule, predict_x0
from .train import (
    chunk_targets,
    demo_tensors,
    diffusion_loss,
    load_policy,
    sample_chunk,
    sample_chunks,
    save_policy,
    train_policy,
)

__all__ = [
    "DiffusionPolicy",
    "DiffusionSchedule",
    "EpisodeRecord",
    "EpisodeSpec",
    "ExpertReplayActor",
    "ObservationEmbedding",
    "PolicyActor",
    "PolicyConfig",
    "PolicyWeights",
    "add_noise",
    "chunk_targets",
    "demo_tensors",
    "diffusion_loss",
    "embed_observation",
    "load_policy",
    "make_schedule",
    "predict_noise",
    "predict_x0",
    "rollout",
    "rollout_batch",
    "sample_chunk",
    "sample_chunks",
    "save_policy",
    "train_policy",
]
