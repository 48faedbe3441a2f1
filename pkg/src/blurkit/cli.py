"""Command-line entry point: ``blurkit <command> [options]``.

Commands: gen-data, make-blur, train, sample, eval. Each command resolves its
parameters from built-in defaults, then an optional JSON ``--config`` file,
then explicit flags, and writes the result to ``<out>/config.json``. Passing
that snapshot back through ``--config`` reproduces the run.

Exit codes: 0 success, 2 configuration or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blur_model import BlurTask, ModeParams, synthesize_blur_task
from .dataset import (
    ClipManifest,
    CorpusConfig,
    config_dict,
    duplicate_interpolator,
    generate_corpus,
    ingest_clip,
    load_task,
    save_task,
)
from .errors import (
    ConfigurationError,
    DomainError,
    UnsupportedOperationError,
)
from .imageio import read_png, write_png

log = logging.getLogger("blurkit")


@dataclass
class GenDataConfig:
    out: str = "corpus"
    seed: int = 0
    n: int = 16
    mode_mix: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    corpus: dict = field(default_factory=dict)
    workers: int | None = None


@dataclass
class MakeBlurConfig:
    clip: str = ""
    out: str = "task"
    seed: int = 0
    mode: str = "present"
    n_targets: int = 16
    n_capture: int | None = None
    offset: int = 0
    upsample: int = 1


@dataclass
class TrainRunConfig:
    corpus: str = ""
    out: str = "run"
    seed: int = 0
    steps: int = 100
    checkpoint_every: int = 0
    resume: str | None = None
    denoiser: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)


@dataclass
class SampleRunConfig:
    checkpoint: str = ""
    blur: str = ""
    intervals: object = None
    out: str = "sample"
    seed: int = 0
    steps: int = 50
    guidance: float = 1.1
    grid: bool = False


@dataclass
class EvalConfig:
    pred: str = ""
    gt: str = ""
    out: str = "eval"
    seed: int = 0
    protocol: str = "present"
    patch: int = 1
    ssim_patch: int = 40


COMMANDS = {
    "gen-data": GenDataConfig,
    "make-blur": MakeBlurConfig,
    "train": TrainRunConfig,
    "sample": SampleRunConfig,
    "eval": EvalConfig,
}


def resolve_config(command: str, config_path: str | None, overrides: dict):
    cls = COMMANDS[command]
    values = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {config_path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
        cmd = data.pop("command", command)
        if cmd != command:
            raise ConfigurationError(f"config is for {cmd!r}, not {command!r}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys for {command}: {sorted(unknown)}")
        values.update(data)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def write_snapshot(command: str, cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **dataclasses.asdict(cfg)}
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def task_dirs(root: Path) -> list[Path]:
    """Task folders under ``root``: the folder itself, a corpus index, or sorted subfolders."""
    root = Path(root)
    if (root / "task.json").is_file():
        return [root]
    if (root / "index.json").is_file():
        index = json.loads((root / "index.json").read_text())
        return [root / t["dir"] for t in index["tasks"]]
    dirs = sorted(p for p in root.iterdir() if (p / "task.json").is_file()) if root.is_dir() else []
    if not dirs:
        raise ConfigurationError(f"no task folders found under {root}")
    return dirs


# --- commands -------------------------------------------------------------------


def cmd_gen_data(cfg: GenDataConfig) -> Path:
    out = Path(cfg.out)
    corpus = CorpusConfig.from_dict(cfg.corpus)
    cfg.corpus = config_dict(corpus)
    write_snapshot("gen-data", cfg, out)
    entries = []
    for i, task in enumerate(generate_corpus(cfg.seed, cfg.n, cfg.mode_mix, corpus, cfg.workers)):
        rel = f"tasks/{i:05d}"
        d = save_task(task, out / rel)
        files = sorted(p for p in d.rglob("*") if p.is_file())
        digest = hashlib.sha256()
        for f in files:
            digest.update(f.relative_to(d).as_posix().encode())
            digest.update(_sha256(f).encode())
        entries.append({"dir": rel, "mode": task.mode, "n_frames": task.n_frames,
                        "sha256": digest.hexdigest()})
    index = {"n": cfg.n, "seed": cfg.seed, "version": __version__, "tasks": entries}
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d tasks to %s", len(entries), out)
    return out


def cmd_make_blur(cfg: MakeBlurConfig) -> Path:
    manifest = ClipManifest.load(cfg.clip)
    hook = duplicate_interpolator if cfg.upsample > 1 else None
    clip = ingest_clip(manifest, hook, cfg.upsample)
    n_native = len(manifest.frames)
    n_capture = cfg.n_capture if cfg.n_capture is not None else n_native - cfg.offset
    params = ModeParams(cfg.mode, cfg.n_targets, n_capture, cfg.upsample, cfg.offset)
    task = synthesize_blur_task(clip, params, fps_native=manifest.fps)
    out = Path(cfg.out)
    write_snapshot("make-blur", cfg, out)
    save_task(task, out)
    log.info("wrote %s task with %d targets to %s", task.mode, task.n_frames, out)
    return out


def cmd_train(cfg: TrainRunConfig) -> Path:
    from .diffusion import (
        DenoiserConfig,
        ModelState,
        TaskTable,
        TrainConfig,
        load_checkpoint,
        train,
    )

    out = Path(cfg.out)
    if cfg.steps < 0:
        raise ConfigurationError("steps must be >= 0")
    if cfg.resume:
        state = load_checkpoint(cfg.resume)
    else:
        state = ModelState.create(DenoiserConfig.from_dict(cfg.denoiser), seed=cfg.seed,
                                  train_config=TrainConfig.from_dict(cfg.train))
    tasks = [load_task(d) for d in task_dirs(Path(cfg.corpus))]
    table = TaskTable(tasks, state.config)
    write_snapshot("train", cfg, out)
    log_path = out / "train_log.jsonl"
    if not cfg.resume:
        log_path.unlink(missing_ok=True)
    train(state, table, cfg.steps, log_path=log_path, checkpoint_path=out / "model.ckpt",
          checkpoint_every=cfg.checkpoint_every)
    log.info("trained to step %d; checkpoint %s", state.step, out / "model.ckpt")
    return out / "model.ckpt"


def parse_intervals(spec) -> list[tuple[float, float]]:
    """Inline JSON list of [start, end] pairs, or a path to a JSON file holding one."""
    if spec is None:
        raise ConfigurationError("sample needs --intervals")
    if isinstance(spec, str):
        text = spec.strip()
        if not text.startswith("[") and Path(text).is_file():
            data = json.loads(Path(text).read_text())
            spec = data["intervals"] if isinstance(data, dict) else data
        else:
            try:
                spec = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"intervals are not valid JSON: {e}") from None
    if not isinstance(spec, list) or not spec:
        raise ConfigurationError("intervals must be a non-empty list of [start, end] pairs")
    pairs = []
    for k, p in enumerate(spec):
        if not (isinstance(p, (list, tuple)) and len(p) == 2
                and all(isinstance(v, (int, float)) for v in p)):
            raise ConfigurationError(f"interval #{k} {p!r} is not a [start, end] pair")
        a, b = float(p[0]), float(p[1])
        if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
            raise ConfigurationError(f"interval #{k} [{a}, {b}] must have finite end > start")
        if pairs and a < pairs[-1][1] - 1e-9:
            raise ConfigurationError(
                f"interval #{k} [{a}, {b}] overlaps or precedes #{k - 1} {list(pairs[-1])}")
        pairs.append((a, b))
    return pairs


def contact_sheet(frames: np.ndarray) -> np.ndarray:
    """Frames laid out left to right with a 1-px white separator."""
    f, h, w, c = frames.shape
    sheet = np.ones((h, f * (w + 1) - 1, c))
    for i, fr in enumerate(frames):
        sheet[:, i * (w + 1): i * (w + 1) + w] = fr
    return sheet


def cmd_sample(cfg: SampleRunConfig) -> Path:
    from .diffusion import SamplerConfig, load_checkpoint, sample

    intervals = parse_intervals(cfg.intervals)
    cfg.intervals = [list(p) for p in intervals]
    sampler = SamplerConfig(steps=cfg.steps, guidance_scale=cfg.guidance, seed=cfg.seed)
    state = load_checkpoint(cfg.checkpoint)
    blur = read_png(cfg.blur)
    seq = sample(blur, intervals, state, sampler)
    out = Path(cfg.out)
    write_snapshot("sample", cfg, out)
    for i, frame in enumerate(seq.frames):
        write_png(out / "frames" / f"{i:03d}.png", frame)
    task = {"color_space": seq.color_space, "intervals": [iv.as_pair() for iv in seq.intervals],
            "mode": "sample"}
    (out / "task.json").write_text(json.dumps(task, indent=2, sort_keys=True))
    write_png(out / "blur.png", blur)
    if cfg.grid:
        write_png(out / "grid.png", contact_sheet(seq.frames))
    log.info("wrote %d frames to %s", len(seq), out / "frames")
    return out


def cmd_eval(cfg: EvalConfig) -> Path:
    from .metrics import PatchGrid, run_protocol

    preds = task_dirs(Path(cfg.pred))
    gts = task_dirs(Path(cfg.gt))
    if len(preds) != len(gts):
        raise ConfigurationError(f"{len(preds)} prediction folders but {len(gts)} ground-truth folders")
    tasks: list[BlurTask] = []
    outputs = []
    for p, g in zip(preds, gts):
        gt = load_task(g)
        pred = load_task(p)
        if pred.targets is None:
            raise ConfigurationError(f"{p} has no frames")
        if gt.targets is None:
            raise ConfigurationError(f"{g} has no ground-truth targets")
        if len(pred.targets) != len(gt.targets):
            raise ConfigurationError(
                f"{p}: {len(pred.targets)} frames but ground truth {g} has {len(gt.targets)}")
        tasks.append(gt)
        outputs.append(pred.target_sequence())
    report = run_protocol(cfg.protocol, tasks, outputs, psnr_grid=PatchGrid(cfg.patch, cfg.patch),
                          ssim_patch=cfg.ssim_patch)
    out = Path(cfg.out)
    write_snapshot("eval", cfg, out)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    log.info("psnr_p %.3f over %d videos", report.aggregates.get("psnr_p", float("nan")), len(tasks))
    return out


HANDLERS = {
    "gen-data": cmd_gen_data,
    "make-blur": cmd_make_blur,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blurkit", description="Exposure-conditioned blur decomposition toolkit")
    ap.add_argument("--version", action="version", version=f"blurkit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("gen-data", help="render a toy corpus")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--mode", help="comma-separated present,long_blur,ppf proportions")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("make-blur", help="build a task from a clip folder")
    common(p)
    p.add_argument("--clip")
    p.add_argument("--mode", choices=["present", "long_blur", "ppf"])
    p.add_argument("--n-targets", type=int, dest="n_targets")
    p.add_argument("--n-capture", type=int, dest="n_capture")
    p.add_argument("--upsample", type=int)

    p = sub.add_parser("train", help="train the denoiser on a corpus")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")

    p = sub.add_parser("sample", help="generate frames from a blurred image")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--blur")
    p.add_argument("--intervals", help="inline JSON [[start, end], ...] or a JSON file")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--grid", action="store_true", default=None)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--protocol", choices=["present", "ppf", "exposure_control"])
    p.add_argument("--patch", type=int, help="PSNR patch size (square)")
    p.add_argument("--ssim-patch", type=int, dest="ssim_patch")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose", "mode")}
    if args.command == "gen-data" and args.mode is not None:
        try:
            overrides["mode_mix"] = [float(x) for x in args.mode.split(",")]
        except ValueError:
            print(f"error: --mode expects three comma-separated numbers, got {args.mode!r}",
                  file=sys.stderr)
            return 2
    elif args.command == "make-blur":
        overrides["mode"] = args.mode
    try:
        try:
            cfg = resolve_config(args.command, args.config, overrides)
        except TypeError as e:
            raise ConfigurationError(str(e)) from None
        HANDLERS[args.command](cfg)
    except (ConfigurationError, DomainError, UnsupportedOperationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure; message keeps any path context
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
