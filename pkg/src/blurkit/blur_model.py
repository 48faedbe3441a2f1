"""Physical motion-blur formation.

A blurred image is the camera response applied to irradiance integrated over
an exposure window. Irradiance is represented by a densely sampled
``FrameSequence``; integration is a duration-weighted mean of the samples in
linear light, which for a uniform sample grid is the plain mean of the
frames that make up the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import AlignmentError, ConfigurationError, CoverageError, DomainError

TIME_EPS = 1e-9
COLOR_EPS = 1e-9

ColorSpace = Literal["srgb", "linear"]
Mode = Literal["present", "long_blur", "ppf"]
MODES: tuple[str, ...] = ("present", "long_blur", "ppf")


def _check_unit_range(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.size and (image.min() < -COLOR_EPS or image.max() > 1.0 + COLOR_EPS):
        raise DomainError(
            f"image values must lie in [0, 1], got [{image.min():.6g}, {image.max():.6g}]"
        )
    return np.clip(image, 0.0, 1.0)


def srgb_to_linear(image) -> np.ndarray:
    """Decode sRGB-encoded values in [0, 1] to linear light."""
    x = _check_unit_range(image)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(image) -> np.ndarray:
    """Encode linear-light values in [0, 1] with the sRGB transfer curve."""
    x = _check_unit_range(image)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1.0 / 2.4) - 0.055)


@dataclass(frozen=True)
class CameraResponse:
    """Camera response ``g``: maps integrated linear irradiance to stored values."""

    kind: Literal["identity", "srgb"] = "srgb"

    def __post_init__(self):
        if self.kind not in ("identity", "srgb"):
            raise ConfigurationError(f"unknown camera response {self.kind!r}")

    def encode(self, linear):
        return linear_to_srgb(linear) if self.kind == "srgb" else _check_unit_range(linear)

    def decode(self, measured):
        return srgb_to_linear(measured) if self.kind == "srgb" else _check_unit_range(measured)

    @classmethod
    def for_color_space(cls, color_space: str) -> "CameraResponse":
        return cls("srgb" if color_space == "srgb" else "identity")


@dataclass(frozen=True, order=True)
class ExposureInterval:
    """Half-open exposure window ``[start, end)`` on a (usually normalized) timeline."""

    start: float
    end: float

    def __post_init__(self):
        start, end = float(self.start), float(self.end)
        if not (np.isfinite(start) and np.isfinite(end)):
            raise DomainError(f"interval bounds must be finite, got ({start}, {end})")
        if not end > start:
            raise DomainError(f"interval end must exceed start, got [{start}, {end}]")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)

    def contains(self, other: "ExposureInterval", eps: float = TIME_EPS) -> bool:
        return other.start >= self.start - eps and other.end <= self.end + eps

    def overlap(self, other: "ExposureInterval") -> float:
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))

    def as_pair(self) -> list[float]:
        return [self.start, self.end]


def as_intervals(pairs) -> tuple[ExposureInterval, ...]:
    """Coerce ``[(start, end), ...]`` or intervals into a tuple of ``ExposureInterval``."""
    out = []
    for p in pairs:
        out.append(p if isinstance(p, ExposureInterval) else ExposureInterval(*p))
    return tuple(out)


def check_sequential(intervals: Sequence[ExposureInterval], eps: float = TIME_EPS) -> None:
    for i in range(1, len(intervals)):
        if intervals[i].start < intervals[i - 1].end - eps:
            raise ConfigurationError(
                f"intervals {i - 1} and {i} overlap or are out of order: "
                f"{intervals[i - 1].as_pair()} then {intervals[i].as_pair()}"
            )


@dataclass(frozen=True)
class FrameSequence:
    """Ordered frames, each tagged with its exposure interval.

    ``frames`` has shape (F, H, W, 3) with values in [0, 1].
    """

    frames: np.ndarray
    intervals: tuple[ExposureInterval, ...]
    color_space: ColorSpace = "srgb"

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if not np.issubdtype(frames.dtype, np.floating):
            frames = frames.astype(np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ConfigurationError(f"frames must have shape (F, H, W, 3), got {frames.shape}")
        intervals = as_intervals(self.intervals)
        if len(intervals) != frames.shape[0]:
            raise ConfigurationError(
                f"{frames.shape[0]} frames but {len(intervals)} intervals"
            )
        if self.color_space not in ("srgb", "linear"):
            raise ConfigurationError(f"unknown color space {self.color_space!r}")
        check_sequential(intervals)
        frames = frames.copy()
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "intervals", intervals)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def durations(self) -> np.ndarray:
        return np.array([iv.duration for iv in self.intervals])

    def linear_frames(self) -> np.ndarray:
        if self.color_space == "srgb":
            return srgb_to_linear(self.frames)
        return _check_unit_range(self.frames)

    def reversed(self) -> "FrameSequence":
        """Frames in reverse order, keeping the interval timeline unchanged."""
        return FrameSequence(self.frames[::-1], self.intervals, self.color_space)


def average_frames(seq: FrameSequence, color_space: str | None = None) -> np.ndarray:
    """Duration-weighted mean of the frames in linear light, re-encoded.

    The result is encoded into ``color_space`` (default: the sequence's own).
    """
    if len(seq) == 0:
        raise ConfigurationError("cannot average an empty sequence")
    w = seq.durations / seq.durations.sum()
    mean = np.tensordot(w, seq.linear_frames(), axes=1)
    return CameraResponse.for_color_space(color_space or seq.color_space).encode(mean)


def integrate_exposure(
    samples: FrameSequence,
    window: ExposureInterval,
    response: CameraResponse = CameraResponse("srgb"),
) -> np.ndarray:
    """Integrate fine samples over ``window`` and apply the camera response.

    Every sample touching the window must lie fully inside it, and the
    contained samples must cover the whole window.
    """
    starts = np.array([iv.start for iv in samples.intervals])
    ends = np.array([iv.end for iv in samples.intervals])
    overlap = np.minimum(ends, window.end) - np.maximum(starts, window.start)
    touching = overlap > TIME_EPS
    inside = (starts >= window.start - TIME_EPS) & (ends <= window.end + TIME_EPS)
    misaligned = np.flatnonzero(touching & ~inside)
    if misaligned.size:
        i = int(misaligned[0])
        raise AlignmentError(
            f"sample {i} {samples.intervals[i].as_pair()} straddles window boundary "
            f"{window.as_pair()}"
        )
    idx = np.flatnonzero(touching)
    covered = float((ends[idx] - starts[idx]).sum())
    if idx.size == 0 or abs(covered - window.duration) > TIME_EPS * max(1, idx.size):
        raise CoverageError(
            f"samples cover {covered:.12g} of window {window.as_pair()} "
            f"(duration {window.duration:.12g})"
        )
    sub = samples.frames[idx]
    linear = srgb_to_linear(sub) if samples.color_space == "srgb" else _check_unit_range(sub)
    weights = (ends[idx] - starts[idx]) / covered
    return response.encode(np.tensordot(weights, linear, axes=1))


@dataclass(frozen=True)
class ModeParams:
    """How to cut one blur task out of a clip.

    Frame counts are in native frames; each native frame is made of
    ``samples_per_frame`` consecutive fine samples of the clip.

    * ``present``: the capture spans ``n_capture`` frames (default
      ``n_targets``); targets evenly subdivide it.
    * ``long_blur``: the capture spans ``n_capture`` frames; targets are
      single frames taken at stride ``n_capture // n_targets``, leaving dead
      time between them when the stride exceeds one.
    * ``ppf``: the capture spans ``n_capture`` frames; ``n_targets``
      single-frame targets are centered on it, reaching into past and future.
    """

    mode: Mode = "present"
    n_targets: int = 16
    n_capture: int | None = None
    samples_per_frame: int = 1
    offset: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_capture is None:
            object.__setattr__(self, "n_capture", self.n_targets)
        n, c = self.n_targets, self.n_capture
        if n < 1 or c < 1 or self.samples_per_frame < 1 or self.offset < 0:
            raise ConfigurationError(f"invalid mode parameters {self}")
        if self.mode in ("present", "long_blur") and c % n:
            raise ConfigurationError(
                f"{self.mode} mode needs n_capture ({c}) divisible by n_targets ({n})"
            )
        if self.mode == "ppf" and n < c:
            raise ConfigurationError(f"ppf mode needs n_targets ({n}) >= n_capture ({c})")

    @property
    def span(self) -> int:
        """Native frames needed from the clip."""
        return self.n_targets if self.mode == "ppf" else self.n_capture

    def frame_ranges(self) -> tuple[tuple[int, int], list[tuple[int, int]]]:
        """Capture range and per-target ranges, as [a, b) native-frame indices."""
        n, c, o = self.n_targets, self.n_capture, self.offset
        if self.mode == "present":
            k = c // n
            return (o, o + c), [(o + i * k, o + (i + 1) * k) for i in range(n)]
        if self.mode == "long_blur":
            k = c // n
            return (o, o + c), [(o + i * k, o + i * k + 1) for i in range(n)]
        before = (n - c) // 2
        return (o + before, o + before + c), [(o + i, o + i + 1) for i in range(n)]


@dataclass
class BlurTask:
    """One training or evaluation unit.

    ``intervals`` are normalized so the capture window is [-0.5, 0.5].
    ``targets`` (F, H, W, 3) holds ground-truth frames when known.
    """

    blur: np.ndarray
    intervals: tuple[ExposureInterval, ...]
    mode: str = "present"
    targets: np.ndarray | None = None
    color_space: ColorSpace = "srgb"
    scene_seed: int | None = None
    fps_native: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.intervals = as_intervals(self.intervals)
        check_sequential(self.intervals)
        if self.targets is not None and len(self.targets) != len(self.intervals):
            raise ConfigurationError(
                f"{len(self.targets)} target frames but {len(self.intervals)} intervals"
            )

    @property
    def n_frames(self) -> int:
        return len(self.intervals)

    def target_sequence(self) -> FrameSequence:
        if self.targets is None:
            raise ConfigurationError("task has no ground-truth frames")
        return FrameSequence(self.targets, self.intervals, self.color_space)


def _normalized(a: int, b: int, cap: tuple[int, int]) -> ExposureInterval:
    c0, c1 = cap
    n = c1 - c0
    return ExposureInterval((a - c0) / n - 0.5, (b - c0) / n - 0.5)


def target_intervals(params: ModeParams) -> tuple[ExposureInterval, ...]:
    """Normalized target intervals implied by ``params`` (no clip needed)."""
    cap, targets = params.frame_ranges()
    return tuple(_normalized(a, b, cap) for a, b in targets)


def synthesize_blur_task(clip: FrameSequence, params: ModeParams, **task_fields) -> BlurTask:
    """Cut a blurred input and its ground-truth targets out of a fine clip."""
    spf = params.samples_per_frame
    need = (params.offset + params.span) * spf
    if len(clip) < need:
        raise ConfigurationError(
            f"{params.mode} mode needs {need} fine samples "
            f"({params.offset + params.span} frames x {spf}), clip has {len(clip)}"
        )
    response = CameraResponse.for_color_space(clip.color_space)

    def window(a: int, b: int) -> ExposureInterval:
        return ExposureInterval(clip.intervals[a * spf].start, clip.intervals[b * spf - 1].end)

    cap, targets = params.frame_ranges()
    blur = integrate_exposure(clip, window(*cap), response)
    frames = np.stack([integrate_exposure(clip, window(a, b), response) for a, b in targets])
    return BlurTask(
        blur=blur,
        intervals=tuple(_normalized(a, b, cap) for a, b in targets),
        mode=params.mode,
        targets=frames,
        color_space=clip.color_space,
        **task_fields,
    )
