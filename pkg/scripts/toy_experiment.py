"""Train the toy model on moving disks and run every probe.

    python scripts/toy_experiment.py --out runs/toy
    python scripts/toy_experiment.py --out runs/quick --steps 1000 --n-tasks 300

Writes train_log.jsonl, model.ckpt, probes.json and the exposure-control and
past/present/future MetricReports (JSON + CSV) into --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

from blurkit.diffusion import save_checkpoint
from blurkit.metrics import run_protocol
from blurkit.toy import (
    Stopwatch,
    ToyConfig,
    evaluate_probes,
    exposure_control_tasks,
    loss_reduction,
    make_tasks,
    oracle_probes,
    ppf_tasks,
    sample_tasks,
    train_toy,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--n-tasks", type=int)
    ap.add_argument("--lr", type=float)
    ap.add_argument("--batch-size", type=int)
    ap.add_argument("--dim", type=int)
    ap.add_argument("--depth", type=int)
    ap.add_argument("--final-lr-ratio", type=float)
    ap.add_argument("--exposure-scenes", type=int, default=10)
    ap.add_argument("--ppf-scenes", type=int, default=10)
    args = ap.parse_args()

    overrides = {k: v for k, v in (("steps", args.steps), ("n_tasks", args.n_tasks),
                                   ("lr", args.lr), ("batch_size", args.batch_size),
                                   ("dim", args.dim), ("depth", args.depth),
                                   ("final_lr_ratio", args.final_lr_ratio)) if v is not None}
    cfg = dataclasses.replace(ToyConfig(), **overrides)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    clock = Stopwatch()

    tasks, _ = make_tasks(cfg, cfg.n_tasks, cfg.corpus_seed)
    print(f"corpus: {len(tasks)} tasks in {clock.mark('corpus'):.0f}s", flush=True)

    def progress(step, loss):
        if step % 250 == 0:
            print(f"step {step:5d} loss {loss:.5f} ({clock.mark('train'):.0f}s)", flush=True)

    log = out / "train_log.jsonl"
    log.unlink(missing_ok=True)
    state, losses = train_toy(cfg, tasks, log_path=log, progress=progress)
    del tasks
    save_checkpoint(state, out / "model.ckpt")
    summary = {"loss": loss_reduction(losses), "train_seconds": clock.mark("train")}
    print("loss", summary["loss"], flush=True)

    held, plans = make_tasks(cfg, cfg.n_heldout, cfg.heldout_seed)
    probes = evaluate_probes(state, cfg, held, plans)
    probes.pop("samples")
    summary["probes"] = probes
    summary["oracle_probes"] = oracle_probes(held, plans)
    print("probes", probes, flush=True)

    ec = exposure_control_tasks(cfg, args.exposure_scenes, seed=2)
    outs = sample_tasks(state, [t.blur for t in ec], [t.intervals for t in ec], cfg.sampler())
    report = run_protocol("exposure_control", ec, outs)
    report.to_json(out / "exposure_control.json")
    report.to_csv(out / "exposure_control.csv")

    pp = ppf_tasks(cfg, args.ppf_scenes, seed=3)
    outs = sample_tasks(state, [t.blur for t in pp], [t.intervals for t in pp], cfg.sampler())
    report = run_protocol("ppf", pp, outs)
    report.to_json(out / "ppf.json")
    report.to_csv(out / "ppf.csv")
    summary["ppf"] = {k: report.aggregates[k] for k in ("within_exposure_psnr", "extrapolated_psnr", "psnr_curve")}
    summary["total_seconds"] = clock.mark("total")
    (out / "probes.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2), flush=True)


if __name__ == "__main__":
    main()
