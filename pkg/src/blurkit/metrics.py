"""Bidirectional video metrics.

A blurred image does not say which way time ran, so predictions are scored
against ground truth both as generated and time-reversed. The choice is made
independently for every spatial patch, which tolerates local direction
ambiguity as well as the global one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import __version__
from .blur_model import BlurTask, FrameSequence, as_intervals, average_frames
from .errors import ConfigurationError

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03

# Published GoPro figures for the exposure-control settings. Kept only as
# context in report metadata; the toy model is not expected to match them.
EXPOSURE_CONTROL_REFERENCE = {
    "2x8": {"psnr_p": 31.10, "ssim_p": 0.92, "lpips_p": 0.014, "fvd": 156.31},
    "4x4": {"psnr_p": 27.65, "ssim_p": 0.86, "lpips_p": 0.024, "fvd": 205.89},
    "8x2": {"psnr_p": 27.07, "ssim_p": 0.84, "lpips_p": 0.027, "fvd": 154.53},
    "16x1": {"psnr_p": 26.15, "ssim_p": 0.82, "lpips_p": 0.028, "fvd": 124.73},
    "16_dead_time": {"psnr_p": 23.00, "ssim_p": 0.72, "lpips_p": 0.054, "fvd": 206.74},
}
PRESENT_REFERENCE = {"psnr_p": 30.01, "ssim_p": 0.9359, "lpips_p": 0.010, "fvd": 21.46,
                     "epe": 0.39, "blur_consistency_psnr": 35.47}


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping patches; trailing rows/columns that do not fill a patch are dropped."""

    height: int = 1
    width: int = 1

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigurationError("patch dimensions must be >= 1")

    def counts(self, h: int, w: int) -> tuple[int, int]:
        if self.height > h or self.width > w:
            raise ConfigurationError(f"patch {self.height}x{self.width} larger than image {h}x{w}")
        return h // self.height, w // self.width

    def blocks(self, video: np.ndarray) -> np.ndarray:
        """(F, H, W, C) -> (F, nh, nw, ph, pw, C)."""
        f, h, w, c = video.shape
        nh, nw = self.counts(h, w)
        ph, pw = self.height, self.width
        v = video[:, : nh * ph, : nw * pw]
        return v.reshape(f, nh, ph, nw, pw, c).transpose(0, 1, 3, 2, 4, 5)

    @classmethod
    def clipped(cls, size: int, h: int, w: int) -> "PatchGrid":
        return cls(min(size, h), min(size, w))


def _video(x) -> np.ndarray:
    v = x.frames if isinstance(x, FrameSequence) else x
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 3:
        v = v[..., None]
    if v.ndim != 4:
        raise ConfigurationError(f"expected a (F, H, W, C) video, got shape {v.shape}")
    return v


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _video(pred), _video(gt)
    if p.shape != g.shape:
        raise ConfigurationError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    return p, g


def mse(a, b) -> float:
    return float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))


def psnr_from_mse(value, cap: float = PSNR_CAP):
    value = np.asarray(value, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = np.where(value > 0, -10.0 * np.log10(np.where(value > 0, value, 1.0)), cap)
    out = np.minimum(out, cap)
    return float(out) if out.ndim == 0 else out


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    """PSNR in dB for data in [0, 1], capped for identical inputs."""
    return psnr_from_mse(mse(a, b), cap)


def bidirectional_patch_metric(metric_fn: Callable[[np.ndarray, np.ndarray], float],
                               pred, gt, grid: PatchGrid = PatchGrid(),
                               lower_is_better: bool = True) -> float:
    """Mean over patches of the better of forward and time-reversed scores.

    ``metric_fn`` receives (pred_patch_video, gt_patch_video), each shaped
    (F, ph, pw, C). For similarity metrics pass ``lower_is_better=False``;
    the max branch is then taken.
    """
    p, g = _pair(pred, gt)
    bp, bg, br = grid.blocks(p), grid.blocks(g), grid.blocks(p[::-1])
    nh, nw = bp.shape[1:3]
    pick = min if lower_is_better else max
    total = 0.0
    for i in range(nh):
        for j in range(nw):
            fwd = metric_fn(bp[:, i, j], bg[:, i, j])
            rev = metric_fn(br[:, i, j], bg[:, i, j])
            total += pick(fwd, rev)
    return total / (nh * nw)


def bidirectional_patch_psnr_frames(pred, gt, grid: PatchGrid = PatchGrid(),
                                    cap: float = PSNR_CAP) -> np.ndarray:
    """Per-frame PSNR after choosing the orientation of every patch.

    Each patch keeps the orientation with the lower whole-video MSE (ties go
    forward); frame MSE is the mean of the kept per-patch MSEs in that frame.
    """
    p, g = _pair(pred, gt)
    fwd = ((grid.blocks(p) - grid.blocks(g)) ** 2).mean(axis=(3, 4, 5))  # (F, nh, nw)
    rev = ((grid.blocks(p[::-1]) - grid.blocks(g)) ** 2).mean(axis=(3, 4, 5))
    use_rev = rev.mean(axis=0) < fwd.mean(axis=0)
    frame_mse = np.where(use_rev[None], rev, fwd).mean(axis=(1, 2))
    return np.atleast_1d(psnr_from_mse(frame_mse, cap))


def bidirectional_patch_psnr(pred, gt, grid: PatchGrid = PatchGrid(),
                             cap: float = PSNR_CAP) -> float:
    return float(np.mean(bidirectional_patch_psnr_frames(pred, gt, grid, cap)))


def _ssim_stats(a: np.ndarray, b: np.ndarray, axes) -> np.ndarray:
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    ma, mb = a.mean(axis=axes), b.mean(axis=axes)
    va = a.var(axis=axes)
    vb = b.var(axis=axes)
    cov = (a * b).mean(axis=axes) - ma * mb
    return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2))


def patch_ssim(pred_patch_video, gt_patch_video, windowed: bool = False) -> float:
    """SSIM averaged over channels and frames (dynamic range 1).

    By default the whole patch is one window. ``windowed=True`` uses a
    Gaussian window (sigma 1.5) and needs patches of at least 8x8.
    """
    a, b = _pair(pred_patch_video, gt_patch_video)
    if not windowed:
        return float(_ssim_stats(a, b, axes=(1, 2)).mean())
    if a.shape[1] < 8 or a.shape[2] < 8:
        raise ConfigurationError("windowed SSIM needs patches of at least 8x8")
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    blur = lambda x: gaussian_filter(x, sigma=(0, 1.5, 1.5, 0), truncate=3.5, mode="reflect")
    ma, mb = blur(a), blur(b)
    va = blur(a * a) - ma**2
    vb = blur(b * b) - mb**2
    cov = blur(a * b) - ma * mb
    s = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2))
    return float(s.mean())


def bidirectional_patch_ssim(pred, gt, grid: PatchGrid = PatchGrid(40, 40)) -> float:
    """Vectorized equivalent of ``bidirectional_patch_metric(patch_ssim, ..., lower_is_better=False)``."""
    p, g = _pair(pred, gt)
    bg = grid.blocks(g)
    fwd = _ssim_stats(grid.blocks(p), bg, axes=(3, 4)).mean(axis=(0, 3))  # (nh, nw)
    rev = _ssim_stats(grid.blocks(p[::-1]), bg, axes=(3, 4)).mean(axis=(0, 3))
    return float(np.maximum(fwd, rev).mean())


FlowFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def bidirectional_epe(flow_fn: FlowFn, pred, gt, mask: np.ndarray | None = None) -> float:
    """Per-pixel best-direction end-point error of first-to-last flow.

    The ground-truth flow runs from its first to its last frame. The
    prediction is scored as generated (first to last) and time-reversed
    (last to first); every pixel keeps the smaller error. ``mask`` restricts
    the mean to selected pixels.
    """
    p, g = _pair(pred, gt)
    h, w = p.shape[1:3]
    f_gt = np.asarray(flow_fn(g[0], g[-1]))
    f_fwd = np.asarray(flow_fn(p[0], p[-1]))
    f_rev = np.asarray(flow_fn(p[-1], p[0]))
    for f in (f_gt, f_fwd, f_rev):
        if f.shape != (h, w, 2):
            raise ConfigurationError(f"flow_fn returned shape {f.shape}, expected {(h, w, 2)}")
    err = np.minimum(np.linalg.norm(f_fwd - f_gt, axis=-1), np.linalg.norm(f_rev - f_gt, axis=-1))
    if mask is None:
        return float(err.mean())
    mask = np.asarray(mask, dtype=bool)
    return float(err[mask].mean()) if mask.any() else 0.0


def farneback_flow(frame_a, frame_b) -> np.ndarray:
    """Classical dense flow adapter (needs OpenCV); returns (H, W, 2) in px."""
    import cv2

    def gray(x):
        x = np.asarray(x, dtype=np.float64)
        return np.round(255 * (x.mean(axis=-1) if x.ndim == 3 else x)).astype(np.uint8)

    return cv2.calcOpticalFlowFarneback(gray(frame_a), gray(frame_b), None,
                                        0.5, 3, 9, 3, 5, 1.1, 0).astype(np.float64)


def blur_consistency_psnr(blur_image, frames: FrameSequence, color_space: str = "srgb",
                          cap: float = PSNR_CAP) -> float:
    """PSNR between the blurred input and the exposure-weighted average of ``frames``."""
    if len(frames) == 0:
        raise ConfigurationError("no frames to average")
    blur = np.asarray(blur_image, dtype=np.float64)
    avg = average_frames(frames, color_space)
    if avg.shape != blur.shape:
        raise ConfigurationError(f"frame shape {avg.shape} != blur shape {blur.shape}")
    return psnr(avg, blur, cap)


# --- reports and protocols ----------------------------------------------------


@dataclass
class MetricReport:
    protocol: str
    per_video: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    SCALARS = ("psnr_p", "ssim_p", "epe", "epe_fg", "blur_consistency_psnr")

    def recompute(self, group: bool = True) -> dict:
        """Aggregates derived from ``per_video`` in index order."""
        agg: dict = {"count": len(self.per_video)}
        for key in self.SCALARS:
            vals = [v[key] for v in self.per_video if v.get(key) is not None]
            if vals:
                agg[key] = float(np.mean(vals))
        for key in sorted({k for v in self.per_video for k in v.get("external", {})}):
            vals = [v["external"][key] for v in self.per_video if key in v.get("external", {})]
            agg[f"external.{key}"] = float(np.mean(vals))
        settings = []
        for v in self.per_video:
            if v.get("setting") not in settings:
                settings.append(v.get("setting"))
        if group and (len(settings) > 1 or self.protocol == "exposure_control"):
            by = {}
            for s in settings:
                sub = MetricReport(self.protocol, [v for v in self.per_video if v.get("setting") == s])
                by[str(s)] = sub.recompute(group=False)
                by[str(s)]["n_frames"] = sub.per_video[0]["n_frames"]
                by[str(s)]["timing_ok"] = all(v["timing_ok"] for v in sub.per_video)
            agg["by_setting"] = by
        curves = [v["psnr_frames"] for v in self.per_video if "psnr_frames" in v]
        if curves:
            n = max(len(c) for c in curves)
            agg["psnr_curve"] = [
                float(np.mean([c[i] for c in curves if len(c) > i])) for i in range(n)
            ]
        inside = [x for v in self.per_video for x in v.get("psnr_within", [])]
        outside = [x for v in self.per_video for x in v.get("psnr_extrapolated", [])]
        if inside:
            agg["within_exposure_psnr"] = float(np.mean(inside))
        if outside:
            agg["extrapolated_psnr"] = float(np.mean(outside))
        return agg

    def finalize(self) -> "MetricReport":
        self.aggregates = self.recompute()
        return self

    def to_dict(self) -> dict:
        return {"aggregates": self.aggregates, "metadata": self.metadata,
                "per_video": self.per_video, "protocol": self.protocol}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def to_csv(self, path) -> None:
        cols = ["index", "setting", "n_frames", *self.SCALARS, "timing_ok"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for v in self.per_video:
                writer.writerow(["" if v.get(c) is None else v.get(c) for c in cols])

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        d = json.loads(Path(path).read_text())
        return cls(d["protocol"], d["per_video"], d["aggregates"], d["metadata"])


PROTOCOLS = ("present", "ppf", "exposure_control")


def _timing_ok(requested, produced) -> bool:
    if len(requested) != len(produced):
        return False
    for a, b in zip(requested, produced):
        if abs(a.start - b.start) > 1e-9 or abs(a.end - b.end) > 1e-9:
            return False
    return all(b.start >= a.end - 1e-9 for a, b in zip(produced, produced[1:]))


def _tiles_capture(intervals) -> list[int] | None:
    """Indices of frames inside [-0.5, 0.5] if they tile it with no dead time."""
    idx = [i for i, iv in enumerate(intervals) if iv.start >= -0.5 - 1e-9 and iv.end <= 0.5 + 1e-9]
    if not idx:
        return None
    ivs = [intervals[i] for i in idx]
    if abs(ivs[0].start + 0.5) > 1e-9 or abs(ivs[-1].end - 0.5) > 1e-9:
        return None
    if any(abs(b.start - a.end) > 1e-9 for a, b in zip(ivs, ivs[1:])):
        return None
    return idx


def run_protocol(tag: str, tasks: Sequence[BlurTask], model_outputs: Sequence,
                 *, psnr_grid: PatchGrid = PatchGrid(1, 1), ssim_patch: int = 40,
                 flow_fn: FlowFn | None = None,
                 external_metrics: dict[str, Callable] | None = None) -> MetricReport:
    """Score model outputs against the ground truth of their tasks.

    ``model_outputs[i]`` is the FrameSequence generated for ``tasks[i]``.
    Every protocol reports PSNR_p, SSIM_p, optional EPE and blur
    consistency; ``ppf`` adds a per-frame PSNR curve split into frames
    inside and outside the capture window; ``exposure_control`` groups
    results by ``task.meta['setting']``.
    """
    if tag not in PROTOCOLS:
        raise ConfigurationError(f"unknown protocol {tag!r}; expected one of {PROTOCOLS}")
    if len(tasks) != len(model_outputs):
        raise ConfigurationError(f"{len(tasks)} tasks but {len(model_outputs)} outputs")
    report = MetricReport(tag, metadata={"protocol": tag, "toolkit_version": __version__,
                                         "psnr_patch": [psnr_grid.height, psnr_grid.width],
                                         "ssim_patch": ssim_patch})
    if tag == "exposure_control":
        report.metadata["published_reference"] = {
            "note": "large-scale GoPro figures, context only; not reproduced at toy scale",
            "values": EXPOSURE_CONTROL_REFERENCE,
        }
    elif tag == "present":
        report.metadata["published_reference"] = {
            "note": "large-scale GoPro figures, context only; not reproduced at toy scale",
            "values": PRESENT_REFERENCE,
        }
    for i, (task, out) in enumerate(zip(tasks, model_outputs)):
        if task.targets is None:
            raise ConfigurationError(f"task {i} has no ground truth")
        if not isinstance(out, FrameSequence):
            out = FrameSequence(np.asarray(out), task.intervals, task.color_space)
        if len(out) != task.n_frames:
            raise ConfigurationError(f"task {i}: {len(out)} output frames, expected {task.n_frames}")
        gt = task.targets
        h, w = gt.shape[1:3]
        row = {
            "index": i,
            "setting": task.meta.get("setting", task.mode),
            "n_frames": task.n_frames,
            "timing_ok": _timing_ok(task.intervals, as_intervals(out.intervals)),
            "psnr_p": bidirectional_patch_psnr(out, gt, psnr_grid),
            "ssim_p": bidirectional_patch_ssim(out, gt, PatchGrid.clipped(ssim_patch, h, w)),
        }
        if flow_fn is not None:
            row["epe"] = bidirectional_epe(flow_fn, out, gt)
            # foreground = pixels with nonzero ground-truth motion
            fg = np.linalg.norm(np.asarray(flow_fn(gt[0], gt[-1])), axis=-1) > 0
            row["epe_fg"] = bidirectional_epe(flow_fn, out, gt, mask=fg)
        inside = _tiles_capture(task.intervals)
        if inside is not None and task.blur is not None:
            sub = FrameSequence(out.frames[inside], [out.intervals[k] for k in inside],
                                out.color_space)
            row["blur_consistency_psnr"] = blur_consistency_psnr(task.blur, sub, task.color_space)
        if tag == "ppf":
            frames = bidirectional_patch_psnr_frames(out, gt, psnr_grid)
            row["psnr_frames"] = [float(x) for x in frames]
            within = set(i for i, iv in enumerate(task.intervals)
                         if iv.start >= -0.5 - 1e-9 and iv.end <= 0.5 + 1e-9)
            row["psnr_within"] = [float(frames[k]) for k in sorted(within)]
            row["psnr_extrapolated"] = [float(frames[k]) for k in range(len(frames)) if k not in within]
        if external_metrics:
            row["external"] = {k: float(fn(out.frames, gt)) for k, fn in external_metrics.items()}
        report.per_video.append(row)
    return report.finalize()
