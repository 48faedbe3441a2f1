"""Conditioning signals for the denoiser.

Exposure intervals are encoded per latent frame: each latent frame stands
for ``g`` physical frames and carries their 2g start/end times. Every time
coordinate goes through a sinusoidal feature map, the features are
concatenated in coordinate order, and an affine layer projects them to the
token width. The blurred input's own window [-0.5, 0.5] is replicated g
times and encoded the same way.

The numpy functions here are the reference; ``IntervalEncoder`` is the
differentiable torch twin used inside the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .blur_model import as_intervals
from .errors import ConfigurationError, DomainError, UnsupportedOperationError

SCHEMES = ("per_interval", "alternative", "linear_ablation")
INPUT_INTERVAL = (-0.5, 0.5)


@dataclass(frozen=True)
class EncoderConfig:
    """Frequencies default to the octave ladder 1, 2, 4, ... (cycles per unit time)."""

    n_freqs: int = 6
    frequencies: tuple[float, ...] | None = None
    out_dim: int = 128
    scheme: str = "per_interval"
    group_size: int = 1
    max_frames: int = 16
    bias: bool = True

    def __post_init__(self):
        if self.frequencies is None:
            object.__setattr__(self, "frequencies", tuple(2.0**i for i in range(self.n_freqs)))
        freqs = tuple(float(f) for f in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        if self.n_freqs < 1 or len(freqs) != self.n_freqs:
            raise ConfigurationError(f"need n_freqs >= 1 matching frequencies, got {freqs}")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ConfigurationError("frequencies must be strictly increasing")
        if self.out_dim < 1:
            raise ConfigurationError("out_dim must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.group_size < 1 or self.max_frames < 1:
            raise ConfigurationError("group_size and max_frames must be >= 1")

    @property
    def in_dim(self) -> int:
        g, n = self.group_size, self.n_freqs
        return {"per_interval": 4 * g * n, "alternative": 8 * n, "linear_ablation": 2 * g}[self.scheme]


def gamma(t, config: EncoderConfig) -> np.ndarray:
    """[cos(2 pi v1 t), sin(2 pi v1 t), ..., cos(2 pi vN t), sin(2 pi vN t)].

    Vectorized: output shape is ``shape(t) + (2N,)``.
    """
    t = np.asarray(t, dtype=np.float64)
    phase = 2 * np.pi * t[..., None] * np.asarray(config.frequencies)
    out = np.empty(t.shape + (2 * config.n_freqs,))
    out[..., 0::2] = np.cos(phase)
    out[..., 1::2] = np.sin(phase)
    return out


@dataclass(frozen=True)
class IntervalGroup:
    """Start/end pairs of the g physical frames behind one latent frame."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0 or len(vals) % 2:
            raise ConfigurationError(f"group needs an even, nonzero length, got {len(vals)}")
        for k in range(0, len(vals), 2):
            if not vals[k + 1] > vals[k]:
                raise ConfigurationError(f"pair {k // 2} has end <= start: {vals[k:k + 2]}")
            # starts non-decreasing; the replicated input group repeats one pair
            if k and vals[k] < vals[k - 2] - 1e-9:
                raise ConfigurationError(f"pairs out of time order at pair {k // 2}")
        object.__setattr__(self, "values", vals)

    @property
    def g(self) -> int:
        return len(self.values) // 2

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def group_intervals(per_frame: Sequence, g: int) -> list[IntervalGroup]:
    """Pack frame intervals into consecutive groups of ``g``."""
    intervals = as_intervals(per_frame)
    if g < 1 or len(intervals) % g:
        raise ConfigurationError(f"{len(intervals)} frames cannot be grouped by g={g}")
    return [
        IntervalGroup(tuple(v for iv in intervals[i:i + g] for v in iv.as_pair()))
        for i in range(0, len(intervals), g)
    ]


def replicate_input_interval(g: int) -> IntervalGroup:
    return IntervalGroup(INPUT_INTERVAL * g)


@dataclass(frozen=True)
class ProjectionWeights:
    """Affine layer: ``features @ matrix + bias``; matrix is (in_dim, out_dim)."""

    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if m.ndim != 2 or b.shape != (m.shape[1],):
            raise ConfigurationError(f"bad projection shapes {m.shape} / {b.shape}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b))):
            raise ConfigurationError("projection weights must be finite")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", b)

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "ProjectionWeights":
        bound = 1.0 / np.sqrt(config.in_dim)
        m = rng.uniform(-bound, bound, size=(config.in_dim, config.out_dim))
        b = rng.uniform(-bound, bound, size=config.out_dim) if config.bias else np.zeros(config.out_dim)
        return cls(m, b)

    def apply(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-1] != self.matrix.shape[0]:
            raise ConfigurationError(
                f"feature width {features.shape[-1]} does not match projection "
                f"input {self.matrix.shape[0]}"
            )
        return features @ self.matrix + self.bias


def _as_group(group) -> IntervalGroup:
    return group if isinstance(group, IntervalGroup) else IntervalGroup(tuple(group))


def encode_group(group, config: EncoderConfig, weights: ProjectionWeights) -> np.ndarray:
    """Linear(Concat(gamma(v) for v in group)) for the per-interval scheme."""
    if config.scheme != "per_interval":
        raise ConfigurationError(f"encode_group needs the per_interval scheme, got {config.scheme}")
    group = _as_group(group)
    if group.g != config.group_size:
        raise ConfigurationError(f"group has g={group.g}, config expects {config.group_size}")
    return weights.apply(gamma(group.as_array(), config).reshape(-1))


def alternative_params(intervals) -> tuple[float, float, float, int]:
    """(first start, last end, frame duration, frame count) for uniform targets."""
    ivs = as_intervals(intervals)
    if not ivs:
        raise ConfigurationError("no intervals")
    d = np.array([iv.duration for iv in ivs])
    if np.ptp(d) > 1e-9:
        raise UnsupportedOperationError(
            "the alternative scheme only describes targets of uniform duration"
        )
    starts = np.array([iv.start for iv in ivs])
    if len(ivs) > 1 and np.ptp(np.diff(starts)) > 1e-9:
        raise UnsupportedOperationError("the alternative scheme needs evenly spaced targets")
    return ivs[0].start, ivs[-1].end, float(d[0]), len(ivs)


def alternative_features(first_start, last_end, frame_duration, frame_count,
                         config: EncoderConfig) -> np.ndarray:
    if frame_count < 1 or frame_count > config.max_frames:
        raise ConfigurationError(f"frame_count must be in [1, {config.max_frames}]")
    if not frame_duration > 0:
        raise ConfigurationError("frame_duration must be positive")
    scalars = np.array([first_start, last_end, frame_duration, frame_count / config.max_frames])
    return gamma(scalars, config).reshape(-1)


def encode_alternative(first_start, last_end, frame_duration, frame_count,
                       config: EncoderConfig, weights: ProjectionWeights) -> np.ndarray:
    """Implicit timing code: span endpoints, uniform duration and frame count."""
    feats = alternative_features(first_start, last_end, frame_duration, frame_count, config)
    return weights.apply(feats)


def encode_group_linear(group, weights: ProjectionWeights) -> np.ndarray:
    """Ablation: affine map of the raw 2g time coordinates, no sinusoids."""
    return weights.apply(_as_group(group).as_array())


# --- spatiotemporal position code ---------------------------------------------


def _axis_pairs(dims: int) -> tuple[int, int, int]:
    pairs = dims // 2
    return pairs - 2 * (pairs // 3), pairs // 3, pairs // 3


def _axis_code(x: np.ndarray, n_pairs: int, base: float) -> np.ndarray:
    omega = base ** (-np.arange(n_pairs) / max(n_pairs, 1))
    phase = np.asarray(x, dtype=np.float64)[..., None] * omega
    out = np.empty(phase.shape[:-1] + (2 * n_pairs,))
    out[..., 0::2] = np.cos(phase)
    out[..., 1::2] = np.sin(phase)
    return out


def position_encoding(frame_index, row, col, dims: int, grid: tuple[int, int, int],
                      base: float = 100.0) -> np.ndarray:
    """Per-axis sinusoidal code for a latent position.

    The embedding is split into contiguous frame / row / col slices of
    interleaved (cos, sin) pairs with geometric frequencies ``base**(-k/n)``.
    Accepts arrays of indices (broadcast together).
    """
    if dims < 6 or dims % 2:
        raise ConfigurationError(f"position code width must be even and >= 6, got {dims}")
    f, r, c = (np.asarray(v) for v in (frame_index, row, col))
    for name, v, n in (("frame", f, grid[0]), ("row", r, grid[1]), ("col", c, grid[2])):
        if np.any(v < 0) or np.any(v >= n):
            raise DomainError(f"{name} index outside grid of size {n}")
    pf, pr, pc = _axis_pairs(dims)
    f, r, c = np.broadcast_arrays(f, r, c)
    return np.concatenate(
        [_axis_code(f, pf, base), _axis_code(r, pr, base), _axis_code(c, pc, base)], axis=-1
    )


# --- torch twin ---------------------------------------------------------------


class IntervalEncoder(nn.Module):
    """Differentiable exposure-interval encoder for any of the three schemes.

    ``forward`` takes per-latent-frame rows: (..., 2g) interval vectors for
    ``per_interval`` and ``linear_ablation``, (..., 4) alternative scalars
    (frame count already divided by ``max_frames``) for ``alternative``.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.register_buffer(
            "freqs", torch.tensor(config.frequencies, dtype=torch.float64), persistent=False
        )
        self.proj = nn.Linear(config.in_dim, config.out_dim, bias=config.bias)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if self.config.scheme == "linear_ablation":
            return x
        phase = 2 * torch.pi * x.unsqueeze(-1) * self.freqs.to(x.dtype)
        feats = torch.stack([torch.cos(phase), torch.sin(phase)], dim=-1)
        return feats.flatten(-3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.features(x))

    def load_weights(self, weights: ProjectionWeights) -> None:
        with torch.no_grad():
            dtype = self.proj.weight.dtype
            self.proj.weight.copy_(torch.as_tensor(weights.matrix.T, dtype=dtype))
            if self.proj.bias is not None:
                self.proj.bias.copy_(torch.as_tensor(weights.bias, dtype=dtype))

    def weights(self) -> ProjectionWeights:
        m = self.proj.weight.detach().double().numpy().T
        b = (self.proj.bias.detach().double().numpy() if self.proj.bias is not None
             else np.zeros(m.shape[1]))
        return ProjectionWeights(m, b)


def condition_rows(intervals, config: EncoderConfig) -> np.ndarray:
    """Encoder input rows for one task: the replicated input group, then targets.

    Shape (F / g + 1, width) where width is 2g, or 4 for the alternative scheme.
    """
    ivs = as_intervals(intervals)
    g = config.group_size
    if config.scheme == "alternative":
        a, b, d, n = alternative_params(ivs)
        if len(ivs) % g:
            raise ConfigurationError(f"{len(ivs)} frames cannot be grouped by g={g}")
        own = np.array([a, b, d, n / config.max_frames])
        inp = np.array([INPUT_INTERVAL[0], INPUT_INTERVAL[1], 1.0, 1.0 / config.max_frames])
        return np.stack([inp] + [own] * (len(ivs) // g))
    groups = [replicate_input_interval(g)] + group_intervals(ivs, g)
    return np.stack([grp.as_array() for grp in groups])
