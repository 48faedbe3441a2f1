"""Exposure-conditioned video denoiser.

Pixel-space stand-in for a latent video transformer: ``g`` consecutive
frames are channel-stacked into one latent frame, the blurred condition image
is tiled ``g`` times to form latent frame 0, and all latent frames are
patchified into one space-time token sequence. Each token receives a
sinusoidal position code, the interval embedding of its latent frame and a
timestep embedding. The network predicts the clean video (x0).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..encoding import EncoderConfig, IntervalEncoder, position_encoding
from ..errors import ConfigurationError


@dataclass(frozen=True)
class DenoiserConfig:
    height: int = 64
    width: int = 64
    channels: int = 3
    patch: int = 4
    dim: int = 128
    depth: int = 6
    heads: int = 4
    mlp_ratio: int = 4
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    residual_condition: bool = False

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in self.encoder.items()}))
        if self.height % self.patch or self.width % self.patch:
            raise ConfigurationError(
                f"image {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigurationError(f"width {self.dim} not divisible by {self.heads} heads")
        if self.encoder.out_dim != self.dim:
            raise ConfigurationError("encoder out_dim must equal the token width")
        if self.encoder.max_frames % self.group_size:
            raise ConfigurationError("max_frames must be divisible by group_size")
        if min(self.depth, self.heads, self.channels, self.mlp_ratio) < 1:
            raise ConfigurationError("depth, heads, channels and mlp_ratio must be >= 1")

    @property
    def group_size(self) -> int:
        return self.encoder.group_size

    @property
    def max_frames(self) -> int:
        return self.encoder.max_frames

    @property
    def grid(self) -> tuple[int, int, int]:
        """(latent frames incl. condition, patch rows, patch cols)."""
        return (self.max_frames // self.group_size + 1, self.height // self.patch,
                self.width // self.patch)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown denoiser config keys: {sorted(unknown)}")
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Block(nn.Module):
    """Pre-LN transformer block with timestep-modulated norms (adaLN-zero)."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(),
                                 nn.Linear(mlp_ratio * dim, dim))
        self.modulation = nn.Linear(dim, 6 * dim)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        shift1, scale1, gate1, shift2, scale2, gate2 = self.modulation(c)[:, None].chunk(6, dim=-1)
        h = self.norm1(x) * (1 + scale1) + shift1
        q, k, v = self.qkv(h).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        h = F.scaled_dot_product_attention(q, k, v).transpose(1, 2).reshape(b, n, d)
        x = x + gate1 * self.proj(h)
        h = self.norm2(x) * (1 + scale2) + shift2
        return x + gate2 * self.mlp(h)


class Denoiser(nn.Module):
    """x0-predicting transformer over [condition frame, noised target frames].

    Inputs are in model space ([-1, 1]); videos are (B, F, H, W, C), the
    condition image (B, H, W, C), interval rows (B, F/g + 1, width) with the
    condition's own row first, timesteps (B,).
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        c, p, g = config.channels, config.patch, config.group_size
        self.token_in = p * p * g * c
        self.patch_in = nn.Linear(self.token_in, config.dim)
        self.encoder = IntervalEncoder(config.encoder)
        self.time_mlp = nn.Sequential(nn.Linear(config.dim, config.dim), nn.SiLU(),
                                      nn.Linear(config.dim, config.dim))
        self.blocks = nn.ModuleList(
            Block(config.dim, config.heads, config.mlp_ratio) for _ in range(config.depth))
        self.norm_out = nn.LayerNorm(config.dim, elementwise_affine=False)
        self.out_modulation = nn.Linear(config.dim, 2 * config.dim)
        self.head = nn.Linear(config.dim, self.token_in)
        for layer in (self.out_modulation, self.head):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)
        lf, nh, nw = config.grid
        fi, ri, ci = np.meshgrid(np.arange(lf), np.arange(nh), np.arange(nw), indexing="ij")
        pos = position_encoding(fi, ri, ci, config.dim, config.grid)
        self.register_buffer("pos", torch.as_tensor(pos, dtype=torch.float32), persistent=False)

    def _tokens(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, L, H, W, g*C) -> (B, L, nh, nw, p*p*g*C)."""
        b, l, h, w, ch = frames.shape
        p = self.config.patch
        x = frames.reshape(b, l, h // p, p, w // p, p, ch)
        return x.permute(0, 1, 2, 4, 3, 5, 6).reshape(b, l, h // p, w // p, p * p * ch)

    def _untokens(self, tokens: torch.Tensor) -> torch.Tensor:
        b, l, nh, nw, _ = tokens.shape
        p, ch = self.config.patch, self.config.group_size * self.config.channels
        x = tokens.reshape(b, l, nh, nw, p, p, ch).permute(0, 1, 2, 4, 3, 5, 6)
        return x.reshape(b, l, nh * p, nw * p, ch)

    def check_inputs(self, x_t, cond, rows, t) -> None:
        cfg = self.config
        if x_t.ndim != 5 or tuple(x_t.shape[2:]) != (cfg.height, cfg.width, cfg.channels):
            raise ConfigurationError(
                f"noised video must be (B, F, {cfg.height}, {cfg.width}, {cfg.channels}), "
                f"got {tuple(x_t.shape)}")
        b, f = x_t.shape[:2]
        if f % cfg.group_size or f > cfg.max_frames:
            raise ConfigurationError(
                f"{f} frames incompatible with g={cfg.group_size}, max {cfg.max_frames}")
        if tuple(cond.shape) != (b, cfg.height, cfg.width, cfg.channels):
            raise ConfigurationError(f"condition shape {tuple(cond.shape)} does not match video")
        if rows.ndim != 3 or rows.shape[:2] != (b, f // cfg.group_size + 1):
            raise ConfigurationError(
                f"expected {f // cfg.group_size + 1} interval rows per item, got {tuple(rows.shape)}")
        if t.shape != (b,):
            raise ConfigurationError("need one timestep per batch item")

    def forward(self, x_t: torch.Tensor, cond: torch.Tensor, rows: torch.Tensor,
                t: torch.Tensor, frame_positions: torch.Tensor | None = None) -> torch.Tensor:
        self.check_inputs(x_t, cond, rows, t)
        cfg = self.config
        b, f, h, w, c = x_t.shape
        g = cfg.group_size
        l = f // g
        latent = x_t.reshape(b, l, g, h, w, c).permute(0, 1, 3, 4, 2, 5).reshape(b, l, h, w, g * c)
        cond_latent = cond[:, None, :, :, None, :].expand(b, 1, h, w, g, c).reshape(b, 1, h, w, g * c)
        tokens = self._tokens(torch.cat([cond_latent, latent], dim=1))
        x = self.patch_in(tokens)
        if frame_positions is None:
            frame_positions = torch.arange(l + 1)
        x = x + self.pos[frame_positions].to(x.dtype)[None]
        x = x + self.encoder(rows.to(x.dtype))[:, :, None, None, :]
        nh, nw = x.shape[2:4]
        x = x.reshape(b, (l + 1) * nh * nw, cfg.dim)
        temb = self.time_mlp(timestep_embedding(t, cfg.dim).to(x.dtype))
        x = x + temb[:, None]
        for blk in self.blocks:
            x = blk(x, temb)
        shift, scale = self.out_modulation(temb)[:, None].chunk(2, dim=-1)
        x = self.norm_out(x) * (1 + scale) + shift
        out = self.head(x).reshape(b, l + 1, nh, nw, self.token_in)[:, 1:]
        out = self._untokens(out).reshape(b, l, h, w, g, c).permute(0, 1, 4, 2, 3, 5)
        out = out.reshape(b, f, h, w, c)
        if cfg.residual_condition:
            out = out + cond[:, None]
        return out
