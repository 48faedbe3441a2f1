"""Procedural toy videos with analytic ground truth, and user clip ingestion.

Toy scenes are rigid disks and rectangles moving at constant velocity (and
optionally rotating) over a smooth background. Because motion is analytic,
a scene can be rendered at any instant, so dense fine sampling replaces a
learned frame interpolator, and optical flow and occlusion are exact.

Scene time is normalized: the renderable domain is [-1.5, 1.5].
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .blur_model import (
    BlurTask,
    ExposureInterval,
    FrameSequence,
    ModeParams,
    linear_to_srgb,
    srgb_to_linear,
    synthesize_blur_task,
)
from .errors import ConfigurationError, DomainError, IngestionError, UnsupportedOperationError
from .imageio import png_size, read_png, write_png

T_MIN, T_MAX = -1.5, 1.5
SUPERSAMPLE = 4


@dataclass(frozen=True)
class SceneObject:
    shape: str  # "disk" | "rectangle"
    size: tuple[float, float]  # disk: (radius, radius); rectangle: half extents
    color: tuple[float, float, float]  # sRGB
    position: tuple[float, float]  # (x, y) px at t = 0
    velocity: tuple[float, float] = (0.0, 0.0)  # px per unit time
    angular_velocity: float = 0.0  # rad per unit time
    angle: float = 0.0  # orientation at t = 0

    def __post_init__(self):
        if self.shape not in ("disk", "rectangle"):
            raise ConfigurationError(f"unknown shape {self.shape!r}")
        size = self.size
        if np.isscalar(size):
            size = (float(size), float(size))
        object.__setattr__(self, "size", tuple(float(s) for s in size))
        for name in ("color", "position", "velocity"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if min(self.size) <= 0:
            raise ConfigurationError("object size must be positive")
        vals = (*self.velocity, self.angular_velocity, *self.position, self.angle)
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("object kinematics must be finite")

    @property
    def moving(self) -> bool:
        return any(v != 0 for v in self.velocity) or self.angular_velocity != 0

    def center(self, t: float) -> np.ndarray:
        return np.array(self.position) + t * np.array(self.velocity)

    def orientation(self, t: float) -> float:
        return self.angle + self.angular_velocity * t

    def inside(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
        cx, cy = self.center(t)
        dx, dy = x - cx, y - cy
        if self.shape == "disk":
            return dx * dx + dy * dy <= self.size[0] ** 2
        th = self.orientation(t)
        c, s = np.cos(th), np.sin(th)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (np.abs(u) <= self.size[0]) & (np.abs(v) <= self.size[1])


@dataclass(frozen=True)
class SceneSpec:
    """A toy scene. Objects later in ``objects`` are nearer to the camera."""

    height: int
    width: int
    objects: tuple[SceneObject, ...]
    background_seed: int = 0
    background_level: float = 0.45
    background_amplitude: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("canvas must be non-empty")
        if not any(o.moving for o in self.objects):
            raise ConfigurationError("at least one object must move")
        for i, o in enumerate(self.objects):
            for t in (T_MIN, T_MAX):  # linear paths: on-canvas times form an interval
                cx, cy = o.center(t)
                r = min(o.size)
                if cx + r < 0 or cx - r > self.width or cy + r < 0 or cy - r > self.height:
                    raise ConfigurationError(f"object {i} leaves the canvas at t={t}")


@lru_cache(maxsize=8)
def _grid(height: int, width: int, ss: int) -> tuple[np.ndarray, np.ndarray]:
    ys = (np.arange(height * ss) + 0.5) / ss
    xs = (np.arange(width * ss) + 0.5) / ss
    x, y = np.meshgrid(xs, ys)
    x.setflags(write=False)
    y.setflags(write=False)
    return x, y


@lru_cache(maxsize=32)
def _background_linear(height, width, seed, level, amplitude) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x, y = _grid(height, width, SUPERSAMPLE)
    img = np.full((*x.shape, 3), level)
    if amplitude:
        for _ in range(3):
            kx, ky = rng.uniform(-2.0, 2.0, size=2) * 2 * np.pi / max(height, width)
            phase = rng.uniform(0, 2 * np.pi)
            tint = rng.uniform(0.5, 1.0, size=3)
            img += (amplitude / 3) * np.sin(kx * x + ky * y + phase)[..., None] * tint
    img = srgb_to_linear(np.clip(img, 0.0, 1.0))
    img.setflags(write=False)
    return img


def _check_time(t: float) -> None:
    if not (T_MIN - 1e-12 <= t <= T_MAX + 1e-12):
        raise DomainError(f"time {t} outside renderable domain [{T_MIN}, {T_MAX}]")


def render_frame(scene: SceneSpec, t: float, draw_background: bool = True) -> np.ndarray:
    """Render the scene at instant ``t`` as an sRGB image (H, W, 3).

    Compositing happens in linear light on a 4x4 supersampled grid, so shape
    edges are anti-aliased.
    """
    _check_time(t)
    x, y = _grid(scene.height, scene.width, SUPERSAMPLE)
    if draw_background:
        img = _background_linear(
            scene.height, scene.width, scene.background_seed,
            scene.background_level, scene.background_amplitude,
        ).copy()
    else:
        img = np.zeros((*x.shape, 3))
    for obj in scene.objects:
        img[obj.inside(x, y, t)] = srgb_to_linear(np.array(obj.color))
    s = SUPERSAMPLE
    img = img.reshape(scene.height, s, scene.width, s, 3).mean(axis=(1, 3))
    return linear_to_srgb(img)


def render_background(scene: SceneSpec) -> np.ndarray:
    """The static background alone, as an sRGB image."""
    img = _background_linear(scene.height, scene.width, scene.background_seed,
                             scene.background_level, scene.background_amplitude)
    s = SUPERSAMPLE
    return linear_to_srgb(img.reshape(scene.height, s, scene.width, s, 3).mean(axis=(1, 3)))


def render_clip(scene: SceneSpec, n_samples: int, window: ExposureInterval) -> FrameSequence:
    """Uniformly sample ``window`` at ``n_samples`` fine frames that tile it."""
    if n_samples < 2:
        raise ConfigurationError(f"n_samples must be >= 2, got {n_samples}")
    a, b = window.start, window.end
    edges = [a + (b - a) * i / n_samples for i in range(n_samples)] + [b]
    frames = np.stack(
        [render_frame(scene, 0.5 * (edges[i] + edges[i + 1])) for i in range(n_samples)]
    )
    return FrameSequence(frames, list(zip(edges[:-1], edges[1:])), "srgb")


def ownership(scene: SceneSpec, t: float, x=None, y=None) -> np.ndarray:
    """Index of the nearest object covering each point (-1 for background).

    Defaults to pixel centers.
    """
    if x is None:
        x, y = _grid(scene.height, scene.width, 1)
    owner = np.full(np.shape(x), -1, dtype=np.int64)
    for i, obj in enumerate(scene.objects):
        owner[obj.inside(x, y, t)] = i
    return owner


def analytic_flow(scene: SceneSpec, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact displacement (H, W, 2) in px from ``t0`` to ``t1``, plus occlusion mask.

    Each pixel center at ``t0`` follows the rigid motion of the object that
    owns it; background pixels do not move. A pixel is marked occluded when
    its material point is not visible at ``t1`` (covered by a nearer object
    or off canvas).
    """
    _check_time(t0)
    _check_time(t1)
    x, y = _grid(scene.height, scene.width, 1)
    owner = ownership(scene, t0, x, y)
    nx, ny = x.copy(), y.copy()
    for i, obj in enumerate(scene.objects):
        m = owner == i
        if not m.any():
            continue
        c0, c1 = obj.center(t0), obj.center(t1)
        dth = obj.angular_velocity * (t1 - t0)
        c, s = np.cos(dth), np.sin(dth)
        px, py = x[m] - c0[0], y[m] - c0[1]
        nx[m] = c1[0] + c * px - s * py
        ny[m] = c1[1] + s * px + c * py
    flow = np.stack([nx - x, ny - y], axis=-1)
    visible_owner = ownership(scene, t1, nx, ny)
    off = (nx < 0) | (nx > scene.width) | (ny < 0) | (ny > scene.height)
    occluded = (visible_owner != owner) | off
    return flow, occluded


class AnalyticFlowOracle:
    """Flow function over rendered frames, backed by ``analytic_flow``.

    Frames are recognized by content; register each one with the scene and
    instant it was rendered from.
    """

    def __init__(self):
        self._index: dict[bytes, tuple[SceneSpec, float]] = {}

    @staticmethod
    def _key(frame) -> bytes:
        return hashlib.sha1(np.ascontiguousarray(frame, dtype=np.float64).tobytes()).digest()

    def register(self, frame, scene: SceneSpec, t: float) -> None:
        self._index[self._key(frame)] = (scene, float(t))

    def register_sequence(self, frames, scene: SceneSpec, times: Sequence[float]) -> None:
        for f, t in zip(frames, times):
            self.register(f, scene, t)

    def __call__(self, frame_a, frame_b) -> np.ndarray:
        try:
            scene_a, ta = self._index[self._key(frame_a)]
            scene_b, tb = self._index[self._key(frame_b)]
        except KeyError:
            raise ConfigurationError("frame was not registered with the flow oracle") from None
        if scene_a != scene_b:
            raise ConfigurationError("frames come from different scenes")
        return analytic_flow(scene_a, ta, tb)[0]


# --- scene families -----------------------------------------------------------


@dataclass(frozen=True)
class SceneFamily:
    """Distribution over random toy scenes.

    ``axis_aligned`` restricts velocities to +/-x or +/-y at exactly
    ``speed`` px per unit time (a single velocity family).
    """

    n_objects: tuple[int, int] = (1, 3)
    radius: tuple[float, float] = (5.0, 10.0)
    speed: tuple[float, float] = (8.0, 24.0)
    axis_aligned: bool = False
    rectangles: bool = True
    max_angular_velocity: float = 1.0
    background_amplitude: float = 0.15


AXIS_DISK = SceneFamily(
    n_objects=(1, 1), radius=(6.0, 8.0), speed=(24.0, 24.0), axis_aligned=True,
    rectangles=False, max_angular_velocity=0.0, background_amplitude=0.1,
)
FAMILIES = {"mixed": SceneFamily(), "axis_disk": AXIS_DISK}


def random_scene(rng: np.random.Generator, height: int, width: int,
                 family: SceneFamily = SceneFamily()) -> SceneSpec:
    for _ in range(1000):
        n = int(rng.integers(family.n_objects[0], family.n_objects[1] + 1))
        objects = []
        for _ in range(n):
            r = float(rng.uniform(*family.radius))
            speed = float(rng.uniform(*family.speed))
            if family.axis_aligned:
                axis = int(rng.integers(2))
                sign = 1.0 if rng.random() < 0.5 else -1.0
                vel = (sign * speed, 0.0) if axis == 0 else (0.0, sign * speed)
            else:
                th = rng.uniform(0, 2 * np.pi)
                vel = (speed * np.cos(th), speed * np.sin(th))
            # keep the t = 0 position near the middle so the path stays on canvas
            pos = (rng.uniform(0.3, 0.7) * width, rng.uniform(0.3, 0.7) * height)
            color = tuple(rng.uniform(0.05, 0.95, size=3))
            if family.rectangles and rng.random() < 0.5:
                objects.append(SceneObject(
                    "rectangle", (r, float(rng.uniform(0.5, 1.0)) * r), color, pos, vel,
                    float(rng.uniform(-1, 1) * family.max_angular_velocity),
                    float(rng.uniform(0, np.pi)),
                ))
            else:
                objects.append(SceneObject("disk", (r, r), color, pos, vel))
        try:
            return SceneSpec(height, width, tuple(objects),
                             background_seed=int(rng.integers(2**31)),
                             background_amplitude=family.background_amplitude)
        except ConfigurationError:
            continue
    raise ConfigurationError("could not draw a valid scene from the family")


# --- corpus -------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusConfig:
    """How random tasks are cut from toy scenes.

    A native frame lasts ``frame_duration`` units of scene time, so the
    renderable domain holds 48 native frames at the default 1/16. Each native
    frame is integrated from ``samples_per_frame`` fine renders.
    """

    height: int = 64
    width: int = 64
    family: str = "mixed"
    frame_duration: float = 1.0 / 16
    samples_per_frame: int = 4
    present_targets: tuple[int, int] = (2, 16)
    present_frames_per_target: tuple[int, ...] = (1, 2)
    long_blur_captures: tuple[int, ...] = (32, 48)
    long_blur_targets: int = 16
    ppf_captures: tuple[int, int] = (2, 8)
    fps_native: float = 240.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown scene family {self.family!r}")
        if self.samples_per_frame < 4:
            raise ConfigurationError("need at least 4 fine samples per target frame")
        if max(self.long_blur_captures) * self.frame_duration > T_MAX - T_MIN + 1e-12:
            raise ConfigurationError("long-blur capture exceeds the renderable domain")
        for c in self.long_blur_captures:
            if c % self.long_blur_targets:
                raise ConfigurationError(f"long-blur capture {c} not divisible by targets")

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown corpus config keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass(frozen=True)
class TaskPlan:
    """Everything needed to render one task, drawn cheaply from the seed stream."""

    index: int
    scene_seed: int
    scene: SceneSpec
    params: ModeParams
    window: ExposureInterval  # scene-time span the task needs


def check_mix(mode_mix) -> np.ndarray:
    mix = np.asarray(mode_mix, dtype=np.float64)
    if mix.shape != (3,) or np.any(mix < 0) or not np.isclose(mix.sum(), 1.0, atol=1e-9):
        raise ConfigurationError(
            f"mode_mix must be three non-negative proportions summing to 1, got {list(mode_mix)}"
        )
    return mix


def task_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def plan_task(seed: int, index: int, mix: np.ndarray, config: CorpusConfig) -> TaskPlan:
    s = task_seed(seed, index)
    rng = np.random.default_rng(s)
    mode = ("present", "long_blur", "ppf")[int(rng.choice(3, p=mix))]
    if mode == "present":
        n = int(rng.integers(config.present_targets[0], config.present_targets[1] + 1))
        k = int(rng.choice(config.present_frames_per_target))
        params = ModeParams("present", n_targets=n, n_capture=n * k)
    elif mode == "long_blur":
        c = int(rng.choice(config.long_blur_captures))
        params = ModeParams("long_blur", n_targets=config.long_blur_targets, n_capture=c)
    else:
        c = int(rng.integers(config.ppf_captures[0], config.ppf_captures[1] + 1))
        params = ModeParams("ppf", n_targets=2 * c, n_capture=c)
    params = ModeParams(params.mode, params.n_targets, params.n_capture,
                        samples_per_frame=config.samples_per_frame)
    total = int(round((T_MAX - T_MIN) / config.frame_duration))
    offset = int(rng.integers(0, total - params.span + 1))
    start = T_MIN + offset * config.frame_duration
    window = ExposureInterval(start, start + params.span * config.frame_duration)
    scene = random_scene(rng, config.height, config.width, FAMILIES[config.family])
    return TaskPlan(index, s, scene, params, window)


def plan_corpus(seed: int, n_scenes: int, mode_mix=(1.0, 0.0, 0.0),
                config: CorpusConfig = CorpusConfig()) -> Iterator[TaskPlan]:
    mix = check_mix(mode_mix)
    for i in range(n_scenes):
        yield plan_task(seed, i, mix, config)


def realize_task(plan: TaskPlan, fps_native: float | None = None) -> BlurTask:
    n = plan.params.span * plan.params.samples_per_frame
    clip = render_clip(plan.scene, n, plan.window)
    return synthesize_blur_task(
        clip, plan.params, scene_seed=plan.scene_seed, fps_native=fps_native,
        meta={"index": plan.index, "window": plan.window.as_pair()},
    )


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("BLURKIT_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def _realize(args):
    return realize_task(*args)


def generate_corpus(seed: int, n_scenes: int, mode_mix=(1.0, 0.0, 0.0),
                    config: CorpusConfig = CorpusConfig(),
                    workers: int | None = None) -> Iterator[BlurTask]:
    """Deterministic stream of ``BlurTask`` under ``seed``.

    Tasks are independent given ``(seed, index)``, so they may be rendered by
    a worker pool; output order is always by index.
    """
    plans = plan_corpus(seed, n_scenes, mode_mix, config)
    workers = num_workers() if workers is None else workers
    jobs = ((p, config.fps_native) for p in plans)
    if workers <= 1:
        yield from map(_realize, jobs)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_realize, jobs, chunksize=4)


# --- user clips ---------------------------------------------------------------


@dataclass
class ClipManifest:
    """A folder of numbered PNG frames described by ``manifest.json``."""

    root: Path
    fps: float
    frames: list[str]
    color_space: str = "srgb"

    def __post_init__(self):
        self.root = Path(self.root)
        if not self.fps > 0:
            raise ConfigurationError(f"fps must be positive, got {self.fps}")
        if len(self.frames) < 2:
            raise ConfigurationError("a clip needs at least two frames")
        if self.color_space not in ("srgb", "linear"):
            raise ConfigurationError(f"unknown color space {self.color_space!r}")

    @classmethod
    def load(cls, root) -> "ClipManifest":
        root = Path(root)
        path = root / "manifest.json"
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise IngestionError(f"missing {path}", [str(path)]) from None
        except json.JSONDecodeError as exc:
            raise IngestionError(f"malformed {path}: {exc}", [str(path)]) from None
        unknown = set(data) - {"fps", "frames", "color_space"}
        if unknown:
            raise ConfigurationError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(root, float(data["fps"]), list(data["frames"]),
                   data.get("color_space", "srgb"))

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        payload = {"color_space": self.color_space, "fps": self.fps, "frames": self.frames}
        (self.root / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))

    def validate(self) -> tuple[int, int]:
        missing = [f for f in self.frames if not (self.root / f).is_file()]
        if missing:
            raise IngestionError(f"missing frames: {missing}", missing)
        sizes = {f: png_size(self.root / f) for f in self.frames}
        ref = sizes[self.frames[0]]
        bad = [f for f, s in sizes.items() if s != ref]
        if bad:
            raise IngestionError(f"frames differ in size from {self.frames[0]} {ref}: {bad}", bad)
        return ref


Interpolator = Callable[[np.ndarray, int], np.ndarray]


def duplicate_interpolator(frames: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor temporal upsampling: repeat every frame ``factor`` times."""
    return np.repeat(frames, factor, axis=0)


def ingest_clip(manifest: ClipManifest, interpolator_hook: Interpolator | None = None,
                upsample: int = 1) -> FrameSequence:
    """Load a clip; intervals are in seconds with zero native dead time.

    With ``upsample > 1`` the hook must return ``upsample`` frames per native
    frame, and each native interval is split evenly among them.
    """
    manifest.validate()
    if upsample < 1:
        raise ConfigurationError(f"upsample must be >= 1, got {upsample}")
    if upsample > 1 and interpolator_hook is None:
        raise UnsupportedOperationError("temporal upsampling requires an interpolator hook")
    frames = np.stack([read_png(manifest.root / f) for f in manifest.frames])
    if upsample > 1:
        frames = np.asarray(interpolator_hook(frames, upsample), dtype=np.float64)
        if frames.shape[0] != len(manifest.frames) * upsample:
            raise ConfigurationError(
                f"interpolator returned {frames.shape[0]} frames, expected "
                f"{len(manifest.frames) * upsample}"
            )
    rate = manifest.fps * upsample
    n = frames.shape[0]
    intervals = [(i / rate, (i + 1) / rate) for i in range(n)]
    return FrameSequence(np.clip(frames, 0.0, 1.0), intervals, manifest.color_space)


# --- on-disk tasks ------------------------------------------------------------


def save_task(task: BlurTask, root) -> Path:
    """Write ``blur.png``, ``targets/NNN.png`` and ``task.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_png(root / "blur.png", task.blur)
    if task.targets is not None:
        for i, frame in enumerate(task.targets):
            write_png(root / "targets" / f"{i:03d}.png", frame)
    meta = {
        "color_space": task.color_space,
        "intervals": [iv.as_pair() for iv in task.intervals],
        "mode": task.mode,
    }
    if task.scene_seed is not None:
        meta["scene_seed"] = task.scene_seed
    if task.fps_native is not None:
        meta["fps_native"] = task.fps_native
    if task.meta:
        meta["meta"] = task.meta
    (root / "task.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return root


def load_task(root) -> BlurTask:
    root = Path(root)
    try:
        meta = json.loads((root / "task.json").read_text())
    except FileNotFoundError:
        raise IngestionError(f"missing {root / 'task.json'}", [str(root / "task.json")]) from None
    frame_dir = root / "targets" if (root / "targets").is_dir() else root / "frames"
    files = sorted(frame_dir.glob("*.png")) if frame_dir.is_dir() else []
    targets = np.stack([read_png(f) for f in files]) if files else None
    blur = read_png(root / "blur.png") if (root / "blur.png").is_file() else None
    return BlurTask(
        blur=blur,
        intervals=[tuple(p) for p in meta["intervals"]],
        mode=meta.get("mode", "present"),
        targets=targets,
        color_space=meta.get("color_space", "srgb"),
        scene_seed=meta.get("scene_seed"),
        fps_native=meta.get("fps_native"),
        meta=meta.get("meta", {}),
    )


def config_dict(config) -> dict:
    return json.loads(json.dumps(asdict(config)))
