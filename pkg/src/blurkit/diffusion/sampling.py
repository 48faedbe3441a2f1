"""Ancestral DDPM sampling with classifier-free guidance on the x0 estimate."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from ..blur_model import FrameSequence, as_intervals
from ..encoding import condition_rows
from ..errors import ConfigurationError
from .model import Denoiser
from .schedule import NoiseSchedule
from .train import ModelState, from_model_space, to_model_space

X0Fn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 1.1
    seed: int = 0
    clip_x0: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("sampler needs at least one step")
        if self.guidance_scale < 0:
            raise ConfigurationError("guidance_scale must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def respaced_timesteps(schedule: NoiseSchedule, steps: int) -> np.ndarray:
    """Descending, strictly decreasing timesteps from T_steps down to 1."""
    if steps > schedule.T_steps:
        raise ConfigurationError(f"{steps} sampler steps exceed schedule length {schedule.T_steps}")
    if steps == 1:
        return np.array([schedule.T_steps])
    return np.round(np.linspace(schedule.T_steps, 1, steps)).astype(np.int64)


def ddpm_loop(x0_fn: X0Fn, shape: tuple[int, ...], schedule: NoiseSchedule, steps: int,
              generator: torch.Generator, clip_x0: bool = True,
              dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Generic respaced ancestral sampler.

    ``x0_fn(x_t, t)`` returns the clean estimate for a (B,) batch of timesteps.
    """
    ts = respaced_timesteps(schedule, steps)
    x = torch.randn(shape, generator=generator, dtype=dtype)
    x0 = x
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab_t = float(schedule.alpha_bars[t - 1])
        ab_prev = float(schedule.alpha_bars[t_prev - 1]) if t_prev > 0 else 1.0
        x0 = x0_fn(x, torch.full((shape[0],), int(t), dtype=torch.int64))
        if clip_x0:
            x0 = x0.clamp(-1, 1)
        if t_prev == 0:
            x = x0
            break
        beta = 1 - ab_t / ab_prev
        c0 = np.sqrt(ab_prev) * beta / (1 - ab_t)
        ct = np.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab_t)
        var = (1 - ab_prev) / (1 - ab_t) * beta
        noise = torch.randn(shape, generator=generator, dtype=dtype)
        x = c0 * x0 + ct * x + np.sqrt(var) * noise
    return x


def guided_x0_fn(model: Denoiser, cond: torch.Tensor, rows: torch.Tensor,
                 scale: float) -> X0Fn:
    """uncond + scale * (cond - uncond); the unconditional pass is skipped at scale 1."""

    def fn(x_t, t):
        with torch.no_grad():
            c = model(x_t, cond, rows, t)
            if scale == 1.0:
                return c
            u = model(x_t, torch.zeros_like(cond), rows, t)
            return u + scale * (c - u)

    return fn


def sample_many(blurs: Sequence[np.ndarray], intervals: Sequence, state: ModelState,
                sampler: SamplerConfig = SamplerConfig()) -> list[FrameSequence]:
    """Batched sampling of tasks that share a frame count; one noise stream for the batch."""
    cfg = state.config
    ivs = [as_intervals(v) for v in intervals]
    if len(ivs) != len(blurs) or not ivs:
        raise ConfigurationError("need one interval list per blur image")
    f = len(ivs[0])
    if any(len(v) != f for v in ivs):
        raise ConfigurationError("batched sampling needs a shared frame count")
    if f % cfg.group_size or f > cfg.max_frames:
        raise ConfigurationError(
            f"{f} target intervals incompatible with g={cfg.group_size}, max {cfg.max_frames}")
    for v in ivs:
        for k, iv in enumerate(v):
            if not iv.end > iv.start:
                raise ConfigurationError(f"interval {k} {iv.as_pair()} is empty or reversed")
    rows = torch.as_tensor(np.stack([condition_rows(v, cfg.encoder) for v in ivs]),
                           dtype=torch.float32)
    cond = to_model_space(np.stack(blurs))
    if tuple(cond.shape[1:]) != (cfg.height, cfg.width, cfg.channels):
        raise ConfigurationError(f"blur image shape {tuple(cond.shape[1:])} does not match model")
    state.model.eval()
    gen = torch.Generator().manual_seed(int(sampler.seed))
    shape = (len(blurs), f, cfg.height, cfg.width, cfg.channels)
    x = ddpm_loop(guided_x0_fn(state.model, cond, rows, float(sampler.guidance_scale)),
                  shape, state.schedule, sampler.steps, gen, sampler.clip_x0)
    frames = from_model_space(x)
    return [FrameSequence(frames[i], ivs[i], "srgb") for i in range(len(blurs))]


def sample(blur_image: np.ndarray, target_intervals, state: ModelState,
           sampler: SamplerConfig = SamplerConfig()) -> FrameSequence:
    """Generate frames for ``target_intervals`` from one blurred image in [0, 1]."""
    return sample_many([blur_image], [target_intervals], state, sampler)[0]
