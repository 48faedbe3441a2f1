"""x0-prediction training with condition dropout."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..blur_model import BlurTask
from ..encoding import ProjectionWeights, condition_rows
from ..errors import ConfigurationError, NonFiniteLossError
from .model import Denoiser, DenoiserConfig
from .schedule import NoiseSchedule, q_sample


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 8
    dropout_rate: float = 0.2
    grad_clip: float | None = 1.0
    # cosine decay from lr to lr * final_lr_ratio over decay_steps; 0 keeps lr constant
    decay_steps: int = 0
    final_lr_ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.lr <= 0 or self.batch_size < 1 or not (0 <= self.dropout_rate <= 1):
            raise ConfigurationError(f"invalid training config {self}")
        if self.decay_steps < 0 or not (0 <= self.final_lr_ratio <= 1):
            raise ConfigurationError(f"invalid lr decay in {self}")

    def lr_at(self, step: int) -> float:
        if not self.decay_steps:
            return self.lr
        frac = min(step, self.decay_steps) / self.decay_steps
        ratio = self.final_lr_ratio + (1 - self.final_lr_ratio) * 0.5 * (1 + np.cos(np.pi * frac))
        return float(self.lr * ratio)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def to_model_space(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x), dtype=torch.float32) * 2 - 1


def from_model_space(x: torch.Tensor) -> np.ndarray:
    return ((x.detach().to(torch.float64) + 1) / 2).clamp(0, 1).numpy()


@dataclass
class Batch:
    """Collated tasks in model space."""

    clean: torch.Tensor  # (B, F, H, W, C)
    cond: torch.Tensor  # (B, H, W, C)
    rows: torch.Tensor  # (B, F/g + 1, width)

    def to(self, dtype) -> "Batch":
        return Batch(self.clean.to(dtype), self.cond.to(dtype), self.rows.to(dtype))

    def __len__(self) -> int:
        return self.clean.shape[0]


def collate(tasks: Sequence[BlurTask], config: DenoiserConfig) -> Batch:
    if not tasks:
        raise ConfigurationError("empty batch")
    counts = {t.n_frames for t in tasks}
    if len(counts) != 1:
        raise ConfigurationError(f"batch mixes frame counts {sorted(counts)}; bucket by count")
    if any(t.targets is None for t in tasks):
        raise ConfigurationError("training tasks need ground-truth targets")
    rows = np.stack([condition_rows(t.intervals, config.encoder) for t in tasks])
    return Batch(
        to_model_space(np.stack([t.targets for t in tasks])),
        to_model_space(np.stack([t.blur for t in tasks])),
        torch.as_tensor(rows, dtype=torch.float32),
    )


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class ModelState:
    """Everything needed to resume training or to sample."""

    model: Denoiser
    optimizer: torch.optim.AdamW
    schedule: NoiseSchedule
    train_config: TrainConfig
    seed: int
    step: int = 0
    last_log: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: DenoiserConfig, seed: int = 0,
               train_config: TrainConfig = TrainConfig(),
               schedule: NoiseSchedule = NoiseSchedule()) -> "ModelState":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            model = Denoiser(config)
        return cls(model, make_optimizer(model, train_config), schedule, train_config, seed)

    @property
    def config(self) -> DenoiserConfig:
        return self.model.config

    @property
    def encoder_weights(self) -> ProjectionWeights:
        return self.model.encoder.weights()


def make_optimizer(model: Denoiser, tc: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=tc.lr, betas=tc.betas, eps=tc.eps,
                             weight_decay=tc.weight_decay)


def training_loss(model: Denoiser, batch: Batch, schedule: NoiseSchedule,
                  t: torch.Tensor, noise: torch.Tensor, drop: torch.Tensor) -> torch.Tensor:
    """Mean squared x0 error with the condition image zeroed where ``drop``."""
    x_t = q_sample(batch.clean, t, noise, schedule)
    cond = torch.where(drop[:, None, None, None], torch.zeros_like(batch.cond), batch.cond)
    pred = model(x_t, cond, batch.rows, t)
    return torch.mean((pred - batch.clean) ** 2)


def draw_step_randomness(batch: Batch, state: ModelState, dropout_rate: float):
    gen = torch.Generator().manual_seed(step_seed(state.seed, state.step))
    b = len(batch)
    t = torch.randint(1, state.schedule.T_steps + 1, (b,), generator=gen)
    noise = torch.randn(batch.clean.shape, generator=gen, dtype=batch.clean.dtype)
    drop = torch.rand(b, generator=gen) < dropout_rate
    return t, noise, drop


def train_step(batch, state: ModelState, dropout_rate: float | None = None) -> tuple[ModelState, float]:
    """One AdamW update on ``batch`` (tasks sharing a frame count, or a Batch).

    Timesteps, noise and dropout draws come from a stream seeded by
    (seed, step), so a resumed run reproduces an uninterrupted one.
    """
    if not isinstance(batch, Batch):
        batch = collate(batch, state.config)
    rate = state.train_config.dropout_rate if dropout_rate is None else dropout_rate
    t, noise, drop = draw_step_randomness(batch, state, rate)
    state.model.train()
    state.optimizer.zero_grad(set_to_none=True)
    loss = training_loss(state.model, batch, state.schedule, t, noise, drop)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}",
            {"step": state.step, "loss": value, "timesteps": t.tolist(), "dropped": drop.tolist()},
        )
    loss.backward()
    for group in state.optimizer.param_groups:
        group["lr"] = state.train_config.lr_at(state.step)
    if state.train_config.grad_clip:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), state.train_config.grad_clip)
    state.optimizer.step()
    state.last_log = {
        "step": state.step,
        "loss": value,
        "lr": state.optimizer.param_groups[0]["lr"],
        "dropout_draws_hash": hashlib.sha1(drop.numpy().astype(np.uint8).tobytes()).hexdigest()[:16],
    }
    state.step += 1
    return state, value


def bucket_indices(frame_counts: Sequence[int]) -> dict[int, np.ndarray]:
    counts = np.asarray(frame_counts)
    return {int(c): np.flatnonzero(counts == c) for c in np.unique(counts)}


def sample_batch_indices(buckets: dict[int, np.ndarray], batch_size: int, seed: int,
                         step: int) -> np.ndarray:
    """Pick a frame-count bucket (proportional to its size), then items from it."""
    rng = np.random.default_rng([seed, step, 1])
    keys = sorted(buckets)
    sizes = np.array([len(buckets[k]) for k in keys], dtype=np.float64)
    k = keys[int(rng.choice(len(keys), p=sizes / sizes.sum()))]
    pool = buckets[k]
    return pool[rng.choice(len(pool), size=batch_size, replace=len(pool) < batch_size)]


class TaskTable:
    """Collated view of a task list, bucketed by frame count for fast batching."""

    def __init__(self, tasks: Sequence[BlurTask], config: DenoiserConfig):
        self.buckets = bucket_indices([t.n_frames for t in tasks])
        self.where: dict[int, tuple[int, int]] = {}
        self.data: dict[int, Batch] = {}
        for k, idx in self.buckets.items():
            self.data[k] = collate([tasks[i] for i in idx], config)
            for j, i in enumerate(idx):
                self.where[int(i)] = (k, j)

    def __len__(self) -> int:
        return len(self.where)

    def batch(self, indices) -> Batch:
        keys = {self.where[int(i)][0] for i in indices}
        if len(keys) != 1:
            raise ConfigurationError("indices span several frame-count buckets")
        d = self.data[keys.pop()]
        j = torch.as_tensor([self.where[int(i)][1] for i in indices])
        return Batch(d.clean[j], d.cond[j], d.rows[j])


def train(state: ModelState, table: TaskTable, steps: int, log_path=None,
          checkpoint_path=None, checkpoint_every: int = 0,
          on_step: Callable[[ModelState, float], None] | None = None) -> list[float]:
    """Run ``steps`` further updates, appending JSON lines to ``log_path``.

    On a non-finite loss the last periodic checkpoint is left untouched and
    the error propagates.
    """
    from .checkpoint import save_checkpoint

    losses = []
    log = open(log_path, "a") if log_path else None
    try:
        for _ in range(steps):
            idx = sample_batch_indices(table.buckets, state.train_config.batch_size,
                                       state.seed, state.step)
            state, loss = train_step(table.batch(idx), state)
            losses.append(loss)
            if log:
                log.write(json.dumps(state.last_log, sort_keys=True) + "\n")
            if on_step:
                on_step(state, loss)
            if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path)
    finally:
        if log:
            log.close()
    if checkpoint_path:
        save_checkpoint(state, checkpoint_path)
    return losses
