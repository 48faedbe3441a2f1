"""Variance-preserving forward process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ConfigurationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule; timesteps are 1-indexed, t in [1, T_steps]."""

    T_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alphas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.T_steps < 1:
            raise ConfigurationError("T_steps must be >= 1")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ConfigurationError(
                f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        betas = np.linspace(self.beta_start, self.beta_end, self.T_steps, dtype=np.float64)
        alphas = 1.0 - betas
        for name, v in (("betas", betas), ("alphas", alphas), ("alpha_bars", np.cumprod(alphas))):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def alpha_bar(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T_steps):
            raise ConfigurationError(f"timestep outside [1, {self.T_steps}]")
        return self.alpha_bars[t - 1]

    def to_dict(self) -> dict:
        return {"T_steps": self.T_steps, "beta_start": self.beta_start, "beta_end": self.beta_end}


def q_sample(clean: torch.Tensor, t, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """sqrt(abar_t) * clean + sqrt(1 - abar_t) * noise.

    ``t`` is an int or a (B,) tensor of per-item timesteps for a batch.
    """
    if clean.shape != noise.shape:
        raise ConfigurationError(f"noise shape {tuple(noise.shape)} != clean shape {tuple(clean.shape)}")
    t_np = t.cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    ab = torch.as_tensor(schedule.alpha_bar(t_np), dtype=clean.dtype)
    if ab.ndim == 1:
        if ab.shape[0] != clean.shape[0]:
            raise ConfigurationError("need one timestep per batch item")
        ab = ab.reshape(-1, *([1] * (clean.ndim - 1)))
    return ab.sqrt() * clean + (1 - ab).sqrt() * noise
