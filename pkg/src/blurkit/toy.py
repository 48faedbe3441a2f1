"""Desk-scale experiment: train on moving disks, then probe the trained model.

The corpus uses the ``axis_disk`` scene family: one disk per scene moving
along x or y at a fixed speed. Every probe here has a known answer: the
input blur for a whole-exposure request, the input blur again for the
average of a present-mode decomposition, and the blur axis for the motion
direction of the generated frames.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .blur_model import BlurTask, ExposureInterval, ModeParams, synthesize_blur_task
from .dataset import (
    FAMILIES,
    CorpusConfig,
    SceneSpec,
    TaskPlan,
    plan_corpus,
    random_scene,
    realize_task,
    render_background,
    render_clip,
)
from .diffusion import (
    DenoiserConfig,
    ModelState,
    SamplerConfig,
    TaskTable,
    TrainConfig,
    sample_many,
    train,
)
from .encoding import EncoderConfig
from .errors import ConfigurationError
from .metrics import blur_consistency_psnr, psnr

# Output-frame counts evaluated on a 16-frame capture, plus the dead-time row.
EXPOSURE_SETTINGS = (
    ("2x8", "present", 2, 16),
    ("4x4", "present", 4, 16),
    ("8x2", "present", 8, 16),
    ("16x1", "present", 16, 16),
    ("16_dead_time", "long_blur", 16, 32),
)


@dataclass(frozen=True)
class ToyConfig:
    n_tasks: int = 2000
    corpus_seed: int = 0
    n_heldout: int = 50
    heldout_seed: int = 1
    frames: tuple[int, int] = (4, 8)
    frames_per_target: tuple[int, ...] = (1, 2)
    size: int = 64
    patch: int = 8
    dim: int = 128
    depth: int = 6
    heads: int = 4
    steps: int = 5000
    batch_size: int = 4
    lr: float = 1e-3
    final_lr_ratio: float = 0.1  # < 1 turns on cosine decay over the run
    train_seed: int = 0
    sampler_steps: int = 50
    guidance: float = 1.1
    sample_seed: int = 0
    sample_chunk: int = 16

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown toy config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def corpus(self) -> CorpusConfig:
        return CorpusConfig(height=self.size, width=self.size, family="axis_disk",
                            present_targets=self.frames,
                            present_frames_per_target=self.frames_per_target)

    def denoiser(self) -> DenoiserConfig:
        return DenoiserConfig(height=self.size, width=self.size, patch=self.patch, dim=self.dim,
                              depth=self.depth, heads=self.heads,
                              encoder=EncoderConfig(out_dim=self.dim))

    def training(self) -> TrainConfig:
        decay = self.steps if self.final_lr_ratio < 1 else 0
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, decay_steps=decay,
                           final_lr_ratio=self.final_lr_ratio if decay else 0.0)

    def sampler(self, guidance: float | None = None) -> SamplerConfig:
        return SamplerConfig(steps=self.sampler_steps,
                             guidance_scale=self.guidance if guidance is None else guidance,
                             seed=self.sample_seed)


def _compact(task: BlurTask) -> BlurTask:
    task.blur = task.blur.astype(np.float32)
    task.targets = task.targets.astype(np.float32)
    return task


def make_tasks(cfg: ToyConfig, n: int, seed: int) -> tuple[list[BlurTask], list[TaskPlan]]:
    """Present-mode tasks and the plans (scenes) they were rendered from."""
    plans = list(plan_corpus(seed, n, (1.0, 0.0, 0.0), cfg.corpus()))
    return [_compact(realize_task(p)) for p in plans], plans


def train_toy(cfg: ToyConfig, tasks: Sequence[BlurTask], log_path=None,
              progress: Callable[[int, float], None] | None = None) -> tuple[ModelState, list[float]]:
    state = ModelState.create(cfg.denoiser(), seed=cfg.train_seed, train_config=cfg.training())
    table = TaskTable(tasks, cfg.denoiser())
    hook = (lambda st, loss: progress(st.step, loss)) if progress else None
    losses = train(state, table, cfg.steps, log_path=log_path, on_step=hook)
    return state, losses


def loss_reduction(losses: Sequence[float], window: int = 100) -> dict:
    """Mean loss over the first and the last ``window`` steps."""
    early = float(np.mean(losses[:window]))
    late = float(np.mean(losses[-window:]))
    return {"early": early, "late": late, "reduction": 1.0 - late / early}


def sample_tasks(state: ModelState, blurs: Sequence[np.ndarray], intervals: Sequence,
                 sampler: SamplerConfig, chunk: int = 16) -> list:
    """Sample many requests, batching those with equal frame counts.

    Chunk ``k`` of a frame-count bucket uses seed ``sampler.seed + k`` mixed
    with the count, so results do not depend on the other buckets.
    """
    out = [None] * len(blurs)
    counts = [len(v) for v in intervals]
    for f in sorted(set(counts)):
        idx = [i for i, c in enumerate(counts) if c == f]
        for k in range(0, len(idx), chunk):
            part = idx[k:k + chunk]
            sub = SamplerConfig(sampler.steps, sampler.guidance_scale,
                                sampler.seed * 1000003 + f * 1009 + k, sampler.clip_x0)
            res = sample_many([blurs[i] for i in part], [intervals[i] for i in part], state, sub)
            for i, r in zip(part, res):
                out[i] = r
    return out


# --- probes -------------------------------------------------------------------


def intensity_centroid(frame: np.ndarray, background: np.ndarray) -> np.ndarray:
    """(x, y) centroid of |frame - background|, in px."""
    w = np.abs(np.asarray(frame, dtype=np.float64) - background).sum(axis=-1)
    total = w.sum()
    if total <= 0:
        return np.array([np.nan, np.nan])
    h, wd = w.shape
    ys, xs = np.mgrid[0:h, 0:wd] + 0.5
    return np.array([(w * xs).sum() / total, (w * ys).sum() / total])


def centroid_track(frames: np.ndarray, background: np.ndarray) -> np.ndarray:
    return np.stack([intensity_centroid(f, background) for f in frames])


def blur_axis(scene: SceneSpec) -> str:
    vx, vy = scene.objects[0].velocity
    return "x" if abs(vx) >= abs(vy) else "y"


def generated_axis(frames: np.ndarray, background: np.ndarray) -> str | None:
    track = centroid_track(frames, background)
    d = np.abs(track[-1] - track[0])
    if not np.all(np.isfinite(d)) or d[0] == d[1]:
        return None
    return "x" if d[0] > d[1] else "y"


def exposure_control_tasks(cfg: ToyConfig, n_scenes: int, seed: int) -> list[BlurTask]:
    """Each scene blurred over one capture and split by every exposure setting."""
    rng = np.random.default_rng(seed)
    family = FAMILIES["axis_disk"]
    frame = cfg.corpus().frame_duration
    spf = cfg.corpus().samples_per_frame
    tasks = []
    for s in range(n_scenes):
        scene = random_scene(rng, cfg.size, cfg.size, family)
        for name, mode, n_targets, n_capture in EXPOSURE_SETTINGS:
            half = n_capture * frame / 2
            clip = render_clip(scene, n_capture * spf, ExposureInterval(-half, half))
            task = synthesize_blur_task(clip, ModeParams(mode, n_targets, n_capture, spf),
                                        meta={"setting": name, "scene": s})
            tasks.append(_compact(task))
    return tasks


def ppf_tasks(cfg: ToyConfig, n_scenes: int, seed: int, n_targets: int = 13,
              n_capture: int = 7) -> list[BlurTask]:
    """Past/present/future requests: ``n_targets`` frames around an ``n_capture`` exposure."""
    rng = np.random.default_rng(seed)
    family = FAMILIES["axis_disk"]
    frame = cfg.corpus().frame_duration
    spf = cfg.corpus().samples_per_frame
    tasks = []
    for s in range(n_scenes):
        scene = random_scene(rng, cfg.size, cfg.size, family)
        half = n_targets * frame / 2
        clip = render_clip(scene, n_targets * spf, ExposureInterval(-half, half))
        task = synthesize_blur_task(clip, ModeParams("ppf", n_targets, n_capture, spf),
                                    meta={"setting": "ppf", "scene": s})
        tasks.append(_compact(task))
    return tasks


def evaluate_probes(state: ModelState, cfg: ToyConfig, tasks: Sequence[BlurTask],
                    plans: Sequence[TaskPlan]) -> dict:
    """Identity-interval PSNR, blur consistency and motion-axis agreement."""
    sampler = cfg.sampler()
    blurs = [t.blur for t in tasks]
    identity = sample_tasks(state, blurs, [[(-0.5, 0.5)]] * len(tasks), sampler, cfg.sample_chunk)
    present = sample_tasks(state, blurs, [t.intervals for t in tasks], sampler, cfg.sample_chunk)
    id_psnr = [psnr(s.frames[0], t.blur) for s, t in zip(identity, tasks)]
    consistency = [blur_consistency_psnr(t.blur, s, t.color_space) for s, t in zip(present, tasks)]
    agree = []
    for s, t, p in zip(present, tasks, plans):
        bg = render_background(p.scene)
        agree.append(generated_axis(s.frames, bg) == blur_axis(p.scene))
    return {
        "identity_psnr": float(np.mean(id_psnr)),
        "identity_psnr_min": float(np.min(id_psnr)),
        "blur_consistency_psnr": float(np.mean(consistency)),
        "blur_consistency_psnr_min": float(np.min(consistency)),
        "direction_agreement": float(np.mean(agree)),
        "n": len(tasks),
        "samples": present,
    }


def oracle_probes(tasks: Sequence[BlurTask], plans: Sequence[TaskPlan]) -> dict:
    """The same probes applied to ground truth, to validate the probes themselves."""
    consistency = [blur_consistency_psnr(t.blur, t.target_sequence(), t.color_space) for t in tasks]
    agree = [generated_axis(t.targets, render_background(p.scene)) == blur_axis(p.scene)
             for t, p in zip(tasks, plans)]
    return {"blur_consistency_psnr": float(np.mean(consistency)),
            "direction_agreement": float(np.mean(agree))}


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()
        self.marks: dict[str, float] = {}

    def mark(self, name: str) -> float:
        now = time.perf_counter()
        self.marks[name] = now - self.t0
        return self.marks[name]
