"""Conditional video diffusion at toy scale."""

from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .model import Denoiser, DenoiserConfig
from .sampling import SamplerConfig, ddpm_loop, guided_x0_fn, sample, sample_many
from .schedule import NoiseSchedule, q_sample
from .train import (
    Batch,
    ModelState,
    TaskTable,
    TrainConfig,
    collate,
    train,
    train_step,
    training_loss,
)

__all__ = [
    "Batch", "Denoiser", "DenoiserConfig", "FORMAT_VERSION", "ModelState", "NoiseSchedule",
    "SamplerConfig", "TaskTable", "TrainConfig", "collate", "ddpm_loop", "guided_x0_fn",
    "load_checkpoint", "q_sample", "sample", "sample_many", "save_checkpoint", "train",
    "train_step", "training_loss",
]
